import re

from hypothesis import given, settings
from hypothesis import strategies as st

from vrebench.model import (
    COLLECTIONS,
    Account,
    BackendKind,
    Content,
    ContentKind,
    Goal,
    GoalComment,
    InformationContentLink,
    Patient,
    Role,
    Term,
    TreatmentContentLink,
    collection_of,
    from_doc,
    id_factory,
    iter_store,
    new_entity_id,
    public_doc,
    random_token,
    to_doc,
    validate_document,
    validate_entity,
    wire_name,
)
from vrebench.seed import seed
from vrebench.store import DocumentStore, NormalizedStore


def test_collection_names_are_the_eleven():
    assert COLLECTIONS == (
        "Accounts", "Administrators", "Categories", "Clinicians", "CliniciansPatients", "Contents",
        "Goals", "Information", "Patients", "TreatmentContent", "Treatments",
    )


def test_document_ids_are_24_hex():
    ids = {new_entity_id("document") for _ in range(1000)}
    assert len(ids) == 1000
    assert all(re.fullmatch(r"[0-9a-f]{24}", i) for i in ids)


def test_normalized_ids_count_up():
    nxt = id_factory(BackendKind.NORMALIZED)
    assert [nxt(), nxt(), nxt()] == ["1", "2", "3"]


def test_wire_names():
    assert wire_name("id") == "_id"
    assert wire_name("patient_id") == "patientId"
    assert wire_name("repetitions_per_day") == "repetitionsPerDay"
    assert wire_name("patient_description") == "patient_description"


def test_random_token_is_24_chars():
    assert len(random_token(18)) == 24


def test_patient_has_only_minimal_fields():
    doc = to_doc(Patient(account_id="a", display_name="P"))
    assert set(doc) == {"accountId", "displayName", "interfaceConfig"}


def test_account_public_form_hides_credentials():
    acct = Account(id="1", username="u", salt="s", password_hash="h", role=Role.CLINICIAN)
    assert "salt" not in to_doc(acct, public=True)
    assert "passwordHash" not in to_doc(acct, public=True)
    assert set(public_doc("Accounts", to_doc(acct))) == {"_id", "username", "role"}


def test_information_links_live_in_treatment_content():
    assert collection_of(InformationContentLink(information_id="i", content_id="c")) == "TreatmentContent"
    assert isinstance(from_doc("TreatmentContent", {"informationId": "i", "contentId": "c"}), InformationContentLink)
    assert isinstance(from_doc("TreatmentContent", {"treatmentId": "t", "contentId": "c"}), TreatmentContentLink)


text = st.text(min_size=1, max_size=20)
comments = st.lists(st.builds(GoalComment, author_id=text, text=text, timestamp=text), max_size=3).map(tuple)
entities = st.one_of(
    st.builds(Goal, id=text, patient_id=text, description=text, term=st.sampled_from(Term), comments=comments),
    st.builds(Account, id=text, username=text, salt=text, password_hash=text, role=st.sampled_from(Role)),
    st.builds(Content, id=text, name=text, media_type=text, patient_description=st.text(),
              clinician_description=st.text(), category_id=text, path=text, creator_id=text,
              kind=st.sampled_from(ContentKind)),
    st.builds(Patient, id=text, account_id=text, display_name=text,
              interface_config=st.dictionaries(text, st.integers() | text, max_size=3)),
)


@settings(max_examples=200, deadline=None)
@given(entities)
def test_round_trip(entity):
    assert from_doc(collection_of(entity), to_doc(entity)) == entity


def test_validate_goal_examples():
    store = DocumentStore()
    acct = store.create("Accounts", {"username": "p", "salt": "s", "passwordHash": "h", "role": "Patient"})
    pid = store.create("Patients", {"accountId": acct, "displayName": "P"})
    good = Goal(patient_id=pid, description="walk", term=Term.SHORT)
    assert validate_entity(good, store) == []
    dangling = Goal(patient_id="000000000000000000000000", description="walk", term=Term.SHORT)
    assert "dangling patientId" in validate_entity(dangling, store)
    assert "empty description" in validate_entity(Goal(patient_id=pid, description="", term=Term.SHORT), store)


def test_duplicate_link_found_by_scan():
    store = DocumentStore()
    store.create("CliniciansPatients", {"_id": "l1", "clinicianId": "c", "patientId": "p"})
    # the document store checks its own index; the validator scans the collection independently
    other = {"_id": "l2", "clinicianId": "c", "patientId": "p"}
    assert "duplicate link" in validate_document("CliniciansPatients", other, store)
    assert "duplicate link" not in validate_document("CliniciansPatients", {"_id": "l3", "clinicianId": "c",
                                                                          "patientId": "q"}, store)


def test_non_strict_checks_presence_only():
    assert validate_document("Goals", {"patientId": 5, "description": "", "term": "x"}, strict=False) == []
    assert validate_document("Goals", {"description": "d"}, strict=False) == ["missing patientId"]


def test_category_cycle_detected():
    store = DocumentStore()
    a = store.create("Categories", {"name": "a"})
    b = store.create("Categories", {"name": "b", "parentId": a})
    assert "category cycle" in validate_document("Categories", {"_id": a, "name": "a", "parentId": b}, store)


def test_seeded_store_validates_everywhere():
    for store in (DocumentStore(), NormalizedStore()):
        seed(store, "small", "/VRE_REPOS")
        bad = [(c, d["_id"], validate_entity(d, store, c)) for c, d in iter_store(store)]
        assert [b for b in bad if b[2]] == []
        store.close()
