import itertools
import random

import pytest

from helpers import brute_closure, random_instance, random_view_layer
from secdecomp import fd
from secdecomp.decompose import decompose
from secdecomp.model import (
    FunctionalDependency,
    LogicalSchema,
    PolicySet,
    QualifiedAttribute,
    RelationSchema,
    SchemaError,
    SecurityDependentSet,
    load_policy,
    load_schema,
)
from secdecomp.verify import (
    CONTAINED,
    INFERABLE,
    audit,
    is_secure,
    join_closure,
    restrict_fds,
)

QA = QualifiedAttribute


def canon(attrs):
    return {a.canonical for a in attrs}


def test_faulty_student_is_insecure(student, faulty_student):
    original, policy = student
    report = audit(faulty_student.relations, original, policy)
    assert not report.secure and report.exit_code == 2
    [v] = report.violations
    assert v.kind == INFERABLE and canon(v.witness) == {"id_STUDENT"}
    assert report.oracle == "agree"


def test_faulty_student_joins_on_id(student, faulty_student):
    original, _ = student
    closure = join_closure(restrict_fds(faulty_student.relations, original))
    both = faulty_student.relations[0].attribute_set | faulty_student.relations[1].attribute_set
    assert both in closure.reachable
    [step] = closure.steps_to(both)
    assert {(a.canonical, b.canonical) for a, b in step.on} >= {("id_STUDENT", "id_STUDENT")}


def test_faulty_student_standalone_schema(faulty_student, student):
    _, policy = student
    report = is_secure(faulty_student, load_policy({"security_dependent_sets": [["STUDENT.email", "STUDENT.gender"]]},
                                                   faulty_student))
    assert report.verdict == "insecure"


def test_correct_student_is_secure_and_name_join_rejected(student, correct_student):
    original, policy = student
    report = audit(correct_student.relations, original, policy)
    assert report.secure and report.oracle == "agree"
    closure = join_closure(restrict_fds(correct_student.relations, original))
    # the views share name, surname, address and age, none of which is a key
    assert sorted(map(canon, closure.reachable)) == sorted(canon(r.attribute_set) for r in correct_student.relations)
    target = {QA("STUDENT", "email"), QA("STUDENT", "gender")}
    assert closure.containing(target) is None


def test_decomposed_retail_is_secure(retail):
    schema, policy = retail
    report = audit(decompose(schema, policy).views(), schema, policy)
    assert report.secure and report.oracle == "agree" and report.exit_code == 0


def test_original_retail_is_insecure_by_both_routes(retail):
    schema, policy = retail
    report = audit(schema.relations, schema, policy)
    assert not report.secure and report.oracle == "agree"
    assert {v.kind for v in report.violations} == {CONTAINED, INFERABLE}


def test_contained_in_relation():
    schema = load_schema({"relations": [{"name": "R", "attributes": ["a", "b", "c"]}]})
    policy = load_policy({"security_dependent_sets": [["R.a", "R.b"]]}, schema)
    report = is_secure(schema, policy)
    assert [(v.kind, v.witness) for v in report.violations] == [(CONTAINED, "R")]


def test_policy_outside_universe_rejected(retail):
    schema, _ = retail
    stray = PolicySet((SecurityDependentSet(frozenset({QA("X", "a"), QA("X", "b")})),))
    with pytest.raises(SchemaError):
        is_secure(schema, stray)


def test_restrict_fds_identity(retail):
    schema, _ = retail
    assert restrict_fds(schema.relations, schema).fds == schema.fds


def test_restrict_fds_decomposed_customer(retail):
    schema, policy = retail
    kept = restrict_fds(decompose(schema, policy).views(), schema).fds
    cid = frozenset({QA("CUSTOMER", "cid")})
    assert FunctionalDependency(cid, QA("CUSTOMER", "name")) in kept
    assert FunctionalDependency(cid, QA("CUSTOMER", "address")) not in kept


def test_restrict_fds_unknown_attribute(retail):
    schema, _ = retail
    with pytest.raises(SchemaError):
        restrict_fds([RelationSchema("V", (QA("CUSTOMER", "nope"),))], schema)


@pytest.mark.parametrize("seed", range(50))
def test_restricted_closure_is_weaker(seed):
    schema, policy = random_instance(seed)
    restricted = restrict_fds(decompose(schema, policy).views(), schema)
    rng = random.Random(seed)
    attrs = sorted(schema.universe, key=lambda a: a.canonical)
    for _ in range(20):
        x = rng.sample(attrs, rng.randint(0, len(attrs)))
        assert brute_closure(x, restricted) <= brute_closure(x, schema)


def test_join_closure_single_relation():
    schema = load_schema({"relations": [{"name": "R", "attributes": ["a", "b"], "primary_key": ["a"]}]})
    closure = join_closure(schema)
    assert closure.reachable == [schema.relations[0].attribute_set] and closure.complete


def test_join_closure_guard(retail):
    schema, _ = retail
    closure = join_closure(schema, max_sets=3)
    assert not closure.complete


def test_unverified_exit_code(retail):
    schema, policy = retail
    views = decompose(schema, policy).views()
    report = audit(views, schema, policy, max_sets=len(views))
    assert report.secure and report.oracle == "unverified" and report.exit_code == 3


@pytest.mark.parametrize("seed", range(40))
def test_join_closure_monotone_in_dependencies(seed):
    schema, _ = random_instance(seed)
    views = random_view_layer(random.Random(seed), schema)
    full = restrict_fds(views, schema)
    fewer = LogicalSchema(full.relations, frozenset(sorted(full.fds, key=FunctionalDependency.sort_key)[::2]),
                          full.foreign_keys)
    assert set(join_closure(fewer).reachable) <= set(join_closure(full).reachable)


@pytest.mark.parametrize("seed", range(200))
def test_decompositions_audit_secure(seed):
    schema, policy = random_instance(seed)
    report = audit(decompose(schema, policy).views(), schema, policy)
    assert report.secure and report.oracle == "agree"


def test_random_view_layers_agree():
    """Logical check and join-closure oracle agree on arbitrary view layers."""
    disagreements = []
    for seed in range(1000):
        schema, policy = random_instance(seed)
        report = audit(random_view_layer(random.Random(seed), schema), schema, policy)
        if report.oracle != "agree":
            disagreements.append(seed)
    assert disagreements == [], f"{len(disagreements)}/1000 view layers disagree, first {disagreements[:10]}"


def test_reachability_matches_logical_characterisation_on_small_instances():
    """A set is reachable by joins iff a view holds it or it is inferable under the realised dependencies."""
    mismatches = 0
    for seed in range(200):
        schema, _ = random_instance(seed, max_relations=2, max_arity=4)
        views = random_view_layer(random.Random(seed), schema)
        restricted = restrict_fds(views, schema)
        closure = join_closure(restricted)
        attrs = sorted(restricted.universe, key=lambda a: a.canonical)
        for pair in itertools.combinations(attrs, 2):
            if len({schema.fk_classes[a] for a in pair}) < 2:
                continue
            policy = PolicySet((SecurityDependentSet(frozenset(pair)),))
            logical = not is_secure(restricted, policy, None).secure
            if logical != (closure.containing(pair) is not None):
                mismatches += 1
    assert mismatches == 0


# Frozen counterexamples from the view-layer differential run. The logical
# check misses both leaks; audit must surface the disagreement, not hide it.

def test_lossless_rejoin_through_member_is_flagged():
    schema = load_schema({"relations": [{"name": "R", "attributes": ["a", "k", "b"], "primary_key": ["k"]}],
                          "functional_dependencies": [{"lhs": ["R.b"], "rhs": "R.a"}]})
    policy = load_policy({"security_dependent_sets": [["R.a", "R.k", "R.b"]]}, schema)
    views = [RelationSchema("V1", (QA("R", "a"), QA("R", "b")), base="R"),
             RelationSchema("V2", (QA("R", "k"), QA("R", "b")), base="R")]
    report = audit(views, schema, policy)
    assert report.secure  # logical verdict: no identifier outside the set
    assert report.oracle == "disagree" and report.as_dict()["inconsistent"]
    assert canon(report.oracle_violations[0][1]) == {"a_R", "k_R", "b_R"}


def test_foreign_key_association_without_identifier_is_flagged():
    schema = load_schema({
        "relations": [{"name": "P", "attributes": ["id", "x"], "primary_key": ["id"]},
                      {"name": "C", "attributes": ["ref", "y", "z"], "primary_key": ["y", "z"]}],
        "foreign_keys": [{"from": {"relation": "C", "attributes": ["ref"]},
                          "to": {"relation": "P", "attributes": ["id"]}}]})
    policy = load_policy({"security_dependent_sets": [["P.x", "C.y"]]}, schema)
    views = [RelationSchema("P_1", (QA("P", "id"), QA("P", "x")), base="P"),
             RelationSchema("C_1", (QA("C", "ref"), QA("C", "y")), base="C"),
             RelationSchema("C_2", (QA("C", "z"),), base="C")]
    report = audit(views, schema, policy)
    assert report.secure
    assert report.oracle == "disagree" and report.disagreements
