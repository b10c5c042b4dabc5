import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehr_spotlight.errors import (
    ConfigError,
    ContractError,
    PathwayLengthError,
    UnlabeledPathwayError,
    VocabularyError,
)
from ehr_spotlight.pathway import (
    CodeVocabulary,
    DimensionConfig,
    Event,
    LabelSpace,
    PathwayImage,
    build_vocabulary,
    compose_pathway,
    extract_labels,
    read_events_text,
    render_image,
)

DIMS = DimensionConfig.default()
COLUMNS = {
    "patient": "pid",
    "time": "days",
    "code": "code",
    "system": "system",
    "dimension": "dim",
}


def ev(pid="p1", time=0, code="C1", system="icd9", dimension="procedures"):
    return Event(pid, time, code, system, dimension)


def test_event_rejects_negative_time():
    with pytest.raises(ContractError):
        ev(time=-1)


def test_dimension_config_needs_exactly_six():
    with pytest.raises(ConfigError):
        DimensionConfig(("a", "b", "c"), condition="a")
    with pytest.raises(ConfigError):
        DimensionConfig(("a", "b", "c", "d", "e", "f"), condition="zz")


def test_ingest_collects_bad_rows_with_line_numbers():
    text = (
        "pid,days,code,system,dim\n"
        "p1,1,A,icd9,procedures\n"
        "p1,oops,B,icd9,procedures\n"
        "p1,2,C,loinc,observations\n"
    )
    events, errors = read_events_text(text, COLUMNS, DIMS)
    assert len(events) == 2
    assert [e.code for e in events] == ["A", "C"]
    assert len(errors) == 1
    assert errors[0].line == 3
    assert "oops" in errors[0].message


def test_ingest_empty_file():
    events, errors = read_events_text("pid,days,code,system,dim\n", COLUMNS, DIMS)
    assert events == [] and errors == []


def test_ingest_missing_column_is_config_error():
    with pytest.raises(ConfigError):
        read_events_text("pid,days\n", COLUMNS, DIMS)
    with pytest.raises(ConfigError):
        read_events_text("pid,days,code,system,dim\n", {"patient": "pid"}, DIMS)


def test_ingest_unmapped_dimension_is_row_error():
    text = "pid,days,code,system,dim\np1,1,A,icd9,starships\n"
    events, errors = read_events_text(text, COLUMNS, DIMS)
    assert events == []
    assert errors[0].line == 2 and "starships" in errors[0].message


def test_ingest_blank_time_means_zero():
    text = "pid,days,code,system,dim\np1,,A,icd9,procedures\n"
    events, _ = read_events_text(text, COLUMNS, DIMS)
    assert events[0].time == 0


def test_ingest_equal_times_keep_file_order():
    text = (
        "pid,days,code,system,dim\n"
        "p1,5,first,icd9,procedures\n"
        "p1,5,second,icd9,procedures\n"
        "p1,1,earliest,icd9,procedures\n"
    )
    events, _ = read_events_text(text, COLUMNS, DIMS)
    # oracle: python sort is stable, so equal-time rows keep file order
    assert [e.code for e in events] == ["earliest", "first", "second"]


def test_build_vocabulary_first_appearance_order():
    events = [ev(code=c) for c in ["A", "B", "A", "C"]]
    vocab = build_vocabulary(events)
    assert vocab.size == 3
    assert vocab.index_for("icd9", "A") == 1
    assert vocab.index_for("icd9", "B") == 2
    assert vocab.index_for("icd9", "C") == 3


def test_build_vocabulary_with_remap():
    # remap {A -> G, B -> G} over [A, B, C] collapses to two entries
    events = [ev(code=c) for c in ["A", "B", "C"]]
    vocab = build_vocabulary(events, remap={"icd9:A": "G", "icd9:B": "G"})
    assert vocab.size == 2
    assert vocab.index_for("icd9", "A") == vocab.index_for("icd9", "B") == 1
    assert vocab.index_for("icd9", "C") == 2
    assert vocab.entry(1).group == "G"


def test_build_vocabulary_empty():
    assert build_vocabulary([]).size == 0


def test_remap_key_without_syntax_tag_rejected():
    with pytest.raises(ConfigError):
        CodeVocabulary(remap={"428.0": "G"})


@given(st.lists(st.sampled_from("ABCDEFGH"), max_size=30))
@settings(max_examples=50, deadline=None)
def test_vocabulary_is_a_bijection(codes):
    vocab = build_vocabulary([ev(code=c) for c in codes])
    distinct = len(set(codes))
    assert vocab.size == distinct
    indices = {vocab.index_for("icd9", c) for c in set(codes)}
    assert indices == set(range(1, distinct + 1))
    for i in indices:
        assert vocab.index_for("icd9", vocab.entry(i).code) == i


def test_compose_sorts_by_time():
    events = [ev(time=2, code="a"), ev(time=0, code="b"), ev(time=1, code="c")]
    pathway = compose_pathway(events)
    assert [e.time for e in pathway.events] == [0, 1, 2]


def test_compose_single_event():
    pathway = compose_pathway([ev()])
    assert len(pathway) == 1


def test_compose_ties_keep_input_order():
    events = [ev(time=0, code="x"), ev(time=0, code="y"), ev(time=0, code="z")]
    pathway = compose_pathway(events)
    assert [e.code for e in pathway.events] == ["x", "y", "z"]
    again = compose_pathway(pathway.events)
    assert [e.code for e in again.events] == ["x", "y", "z"]  # idempotent


def test_compose_rejects_mixed_patients():
    with pytest.raises(ContractError):
        compose_pathway([ev(pid="p1"), ev(pid="p2")])


def test_render_empty_width_grid():
    events = [ev(code="A")]
    vocab = build_vocabulary(events)
    image = render_image(compose_pathway(events), vocab, DIMS, width=10)
    assert image.grid.shape == (6, 10)


def test_render_hand_placement():
    events = [
        ev(time=0, code="A", dimension=DIMS.dimensions[2]),
        ev(time=1, code="B", dimension=DIMS.dimensions[4]),
    ]
    vocab = build_vocabulary(events)
    image = render_image(compose_pathway(events), vocab, DIMS, width=8)
    expected = np.zeros((6, 8), dtype=np.int64)
    expected[2, 0] = vocab.index_for("icd9", "A")
    expected[4, 1] = vocab.index_for("icd9", "B")
    assert np.array_equal(image.grid, expected)


def test_render_nonzero_cells_equal_event_count():
    rng = np.random.default_rng(0)
    events = [
        ev(time=int(t), code=f"C{i}", dimension=DIMS.dimensions[int(rng.integers(0, 6))])
        for i, t in enumerate(sorted(rng.integers(0, 20, size=17)))
    ]
    vocab = build_vocabulary(events)
    image = render_image(compose_pathway(events), vocab, DIMS, width=30)
    assert int((image.grid != 0).sum()) == 17
    assert int((image.grid != 0).any(axis=0).sum()) == 17  # one event per column


def test_render_rejects_overlong_pathway():
    events = [ev(time=i, code=f"C{i}") for i in range(11)]
    vocab = build_vocabulary(events)
    with pytest.raises(PathwayLengthError):
        render_image(compose_pathway(events), vocab, DIMS, width=10)


def test_render_unknown_code():
    events = [ev(code="A")]
    vocab = build_vocabulary(events)
    stranger = compose_pathway([ev(code="Z")])
    with pytest.raises(VocabularyError):
        render_image(stranger, vocab, DIMS, width=10)


def _labeled_image(condition_codes, extra_codes=()):
    events = []
    t = 0
    for code in condition_codes:
        events.append(ev(time=t, code=code, system="cond", dimension=DIMS.condition))
        t += 1
    for code in extra_codes:
        events.append(ev(time=t, code=code, dimension="observations"))
        t += 1
    vocab = build_vocabulary(events)
    image = render_image(compose_pathway(events), vocab, DIMS, width=16)
    return image, vocab


def test_extract_single_condition_appends_end():
    image, vocab = _labeled_image(["c1"], extra_codes=["o1"])
    space = LabelSpace.from_vocabulary(vocab, DIMS)
    input_grid, labels = extract_labels(image, DIMS, space)
    assert input_grid.shape == (5, 16)
    assert labels == [0, space.end_class]
    # condition row removed: the condition code index never appears in the input
    assert vocab.index_for("cond", "c1") not in input_grid


def test_extract_two_conditions_fill_the_length_cap():
    image, vocab = _labeled_image(["c1", "c2"])
    space = LabelSpace.from_vocabulary(vocab, DIMS)
    _, labels = extract_labels(image, DIMS, space)
    assert labels == [0, 1]


def test_extract_dedups_and_truncates():
    image, vocab = _labeled_image(["c1", "c1", "c2", "c3"])
    space = LabelSpace.from_vocabulary(vocab, DIMS)
    _, labels = extract_labels(image, DIMS, space)
    assert labels == [0, 1]  # first two distinct conditions


def test_extract_unlabeled_pathway():
    image, vocab = _labeled_image([], extra_codes=["o1"])
    space = LabelSpace.from_vocabulary(vocab, DIMS)
    with pytest.raises(UnlabeledPathwayError):
        extract_labels(image, DIMS, space)


def test_label_space_names():
    _, vocab = _labeled_image(["c1", "c2"])
    space = LabelSpace.from_vocabulary(vocab, DIMS)
    assert space.num_classes == 3
    assert space.name_of(0) == "c1"
    assert space.name_of(space.end_class) == "END"


def test_pathway_image_rejects_negative_cells():
    with pytest.raises(ContractError):
        PathwayImage("p", np.array([[-1, 0]]))
