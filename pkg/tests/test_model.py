import pytest

from hypothesis import given, strategies as st

from archivist.model import (INT64_MAX, MISSING, FileDescriptionRule,
                             PointerSyntaxError, Record, RuleDefinitionError,
                             RuleKind, RuleSet, StructuredMetadata,
                             canonical_text, content_hash, is_number,
                             loads_value, split_pointer, value_get)


def test_value_get_walks_objects_and_lists():
    root = {'a': {'b': [10, {'c': 'x'}]}}
    assert value_get(root, 'a/b/0') == 10
    assert value_get(root, 'a/b/1/c') == 'x'
    assert value_get(root, '') == root


def test_value_get_missing_paths():
    root = {'a': {'b': [10]}}
    assert value_get(root, 'a/z') is MISSING
    assert value_get(root, 'a/b/3') is MISSING
    assert value_get(root, 'a/b/x') is MISSING
    assert value_get(root, 'a/b/0/deeper') is MISSING


def test_missing_is_not_a_value():
    assert not MISSING
    assert MISSING is not None


@pytest.mark.parametrize('pointer', ['/a', 'a/', 'a//b'])
def test_malformed_pointers(pointer):
    with pytest.raises(PointerSyntaxError):
        split_pointer(pointer)


def test_booleans_are_not_numbers():
    assert is_number(3) and is_number(3.5)
    assert not is_number(True)
    assert not is_number('3')


def test_canonical_text_sorts_keys_and_keeps_float_kind():
    text = canonical_text({'b': 16.0, 'a': 16})
    assert text == '{\n  "a": 16,\n  "b": 16.0\n}\n'


def test_canonical_text_refuses_nan():
    with pytest.raises(ValueError):
        canonical_text({'x': float('nan')})


def test_loads_value_classifies_numbers():
    value = loads_value('{"i": 4, "f": 4.0, "e": 1e3, "big": %d}' % (INT64_MAX + 1))
    assert value['i'] == 4 and isinstance(value['i'], int)
    assert isinstance(value['f'], float)
    assert isinstance(value['e'], float)
    assert isinstance(value['big'], float)


def test_loads_value_rejects_non_finite():
    with pytest.raises(ValueError):
        loads_value('{"x": NaN}')


def test_content_hash_ignores_key_order():
    assert content_hash({'a': 1, 'b': 2}) == content_hash({'b': 2, 'a': 1})
    assert content_hash({'a': 1}) != content_hash({'a': 1.0})


def test_exact_rule_matches_only_its_name():
    rule = FileDescriptionRule('config', 'config.yaml')
    assert rule.kind is RuleKind.EXACT_NAME
    assert rule.matches('config.yaml')
    assert not rule.matches('config.yaml.bak')


def test_regex_rule_is_anchored_and_skips_hidden_files():
    rule = FileDescriptionRule('time', r'time_[0-9]+\.txt', kind='regex')
    assert rule.matches('time_12.txt')
    assert not rule.matches('xtime_12.txt')
    assert not rule.matches('time_12.txt.gz')
    hidden = FileDescriptionRule('any', r'.*', kind='regex')
    assert not hidden.matches('.hidden')


def test_rule_definition_errors():
    with pytest.raises(RuleDefinitionError):
        FileDescriptionRule('not a name', 'x')
    with pytest.raises(RuleDefinitionError):
        FileDescriptionRule('bad', '(', kind='regex')
    with pytest.raises(RuleDefinitionError):
        RuleSet([FileDescriptionRule('a', 'x'), FileDescriptionRule('a', 'y')])


def test_ruleset_keeps_declaration_order():
    rules = RuleSet([FileDescriptionRule('b', r'.*\.txt', kind='regex'),
                     FileDescriptionRule('a', 'x.txt')])
    assert rules.names() == ['b', 'a']
    assert [r.name for r in rules.matching('x.txt')] == ['b', 'a']
    assert 'a' in rules and rules.get('zzz') is None


def test_record_dict_form():
    meta = StructuredMetadata(body={'x': 1}, schema_id='abc')
    record = Record(uid='0' * 64, metadata=meta, blob_path='blobs/' + '0' * 64,
                    created_at='2024-01-01T00:00:00.000000Z')
    assert Record.from_dict(record.to_dict()) == record
    assert set(record.to_dict()) == {'uid', 'metadata', 'schema_id',
                                     'blob_path', 'created_at'}


scalars = st.one_of(st.none(), st.booleans(),
                    st.integers(min_value=-2 ** 63, max_value=2 ** 63 - 1),
                    st.floats(allow_nan=False, allow_infinity=False),
                    st.text())
values = st.recursive(scalars, lambda children: st.one_of(
    st.lists(children, max_size=4),
    st.dictionaries(st.text(max_size=8), children, max_size=4)), max_leaves=20)


@given(values)
def test_canonical_text_reads_back_with_kinds(value):
    assert canonical_text(loads_value(canonical_text(value))) == canonical_text(value)
