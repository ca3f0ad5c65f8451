from vrebench.seed import seed
from vrebench.store import DocumentStore, NormalizedStore
from vrebench.store.oracle import Op, Ref, canonical_dump, equivalence_oracle, random_valid_ops, temporary_stores


def test_empty_sequence_has_no_divergence():
    verdict = equivalence_oracle([])
    assert verdict.equivalent and verdict.ops == 0


def test_thousand_random_ops_agree():
    ops = random_valid_ops(1000, seed=1)
    assert len(ops) == 1000
    assert {op.action for op in ops} == {"create", "read", "update", "delete", "list"}
    verdict = equivalence_oracle(ops)
    assert verdict.ops == 1000
    assert verdict.divergences == []


def test_generator_is_reproducible():
    assert random_valid_ops(200, seed=5) == random_valid_ops(200, seed=5)
    assert random_valid_ops(200, seed=5) != random_valid_ops(200, seed=6)


def test_file_backed_replay_agrees(tmp_path):
    document, normalized = temporary_stores(str(tmp_path))
    verdict = equivalence_oracle(random_valid_ops(300, seed=2), document, normalized)
    assert verdict.equivalent
    document.close()
    normalized.close()


def test_dangling_insert_is_expected_by_design():
    ops = [Op("create", "Goals", record={"patientId": "nobody", "description": "d", "term": "Short"})]
    verdict = equivalence_oracle(ops)
    assert len(verdict.divergences) == 1
    div = verdict.divergences[0]
    assert div.results["normalized"] == ("error", "ReferentialViolation")
    assert div.results["document"][0] == "ok"
    assert div.expected_by_design
    assert verdict.unexpected == []


def test_referenced_delete_is_expected_by_design():
    acct = {"username": "p", "salt": "s", "passwordHash": "h", "role": "Patient"}
    ops = [
        Op("create", "Accounts", record=acct),
        Op("create", "Patients", record={"accountId": Ref(0), "displayName": "P"}),
        Op("create", "Goals", record={"patientId": Ref(1), "description": "d", "term": "Short"}),
        Op("delete", "Patients", Ref(1)),
    ]
    verdict = equivalence_oracle(ops)
    assert [d.index for d in verdict.divergences] == [3]
    assert verdict.unexpected == []


def test_real_divergence_is_not_excused():
    document = DocumentStore()
    document.create("Categories", {"name": "planted"})
    verdict = equivalence_oracle([Op("list", "Categories")], document=document)
    assert len(verdict.unexpected) == 1
    document.close()


def test_seeded_stores_dump_identically():
    dumps = []
    for store in (DocumentStore(), NormalizedStore()):
        seed(store, "small", "/VRE_REPOS")
        dumps.append(canonical_dump(store))
        store.close()
    assert dumps[0] == dumps[1]
