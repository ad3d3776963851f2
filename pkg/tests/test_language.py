import itertools

import numpy as np
import pytest

from difftraffic.labeling import SUBTYPES, InteractionKind, InteractionLabel
from difftraffic.netparams import init_params
from difftraffic.scenarios import SCRIPTS, generate_scenario
from difftraffic.textenc import LangEmbedding, encode_prompt, fuse_language
from difftraffic.vocab import (
    NULL_ID,
    TAG_PHRASES,
    TOKENS,
    VocabularyError,
    compose_prompt,
    interaction_prompt,
    load_vocabulary,
    save_vocabulary,
    tokenize,
)


def test_yield_template_roles():
    label = InteractionLabel(0, 1, InteractionKind.YIELDING, "intersection yielding")
    labels = {"tags": [[], []], "interactions": [label]}
    p0 = compose_prompt(labels, target=0)
    assert p0.raw == "target agent yields to other agent1 at the intersection"
    p1 = compose_prompt(labels, target=1)
    assert p1.raw == "other agent1 yields to target agent at the intersection"


def test_compositional_prompt_single_sentence():
    label = InteractionLabel(0, 1, InteractionKind.YIELDING, "intersection yielding")
    labels = {"tags": [["slowing_down"], []], "interactions": [label]}
    p = compose_prompt(labels, target=0)
    assert p.raw == ("target agent yields to other agent1 at the intersection"
                     " and is slowing down")
    assert p.tokens == tokenize(p.raw)


def test_unknown_tag_raises():
    with pytest.raises(VocabularyError):
        tokenize("target agent performs quantum tunneling")


def test_vocabulary_closure_over_generated_labels():
    # every emitted label renders into in-vocabulary tokens
    for script in SCRIPTS:
        for seed in (0, 7):
            sc = generate_scenario(script, seed=seed)
            for agent in sc.interest_pair:
                p = sc.prompts[agent]
                assert all(0 <= t < len(TOKENS) for t in p.tokens)


def test_all_templates_and_tags_tokenize():
    for kind, subtypes in SUBTYPES.items():
        for subtype in subtypes:
            label = InteractionLabel(0, 1, kind, subtype)
            for target in (0, 1):
                interaction_prompt(label, target)
    for tag, phrase in TAG_PHRASES.items():
        tokenize(phrase)


def test_vocab_file_round_trip(tmp_path):
    path = tmp_path / "vocab.txt"
    save_vocabulary(path)
    loaded = load_vocabulary(path)
    assert loaded == TOKENS


def test_null_prompt_embedding():
    params = init_params(0)
    e = encode_prompt(None, params)
    assert e.is_null
    assert np.all(np.isfinite(e.vector))
    # determinism, and the null embedding is a fixed function of the params
    e2 = encode_prompt(None, params)
    assert np.array_equal(e.vector, e2.vector)


def test_identical_prompts_identical_embeddings():
    params = init_params(1)
    label = InteractionLabel(0, 1, InteractionKind.OVERTAKING, "standard overtaking")
    p = interaction_prompt(label, 0)
    a = encode_prompt(p, params)
    b = encode_prompt(p, params)
    assert np.array_equal(a.vector, b.vector)
    assert not a.is_null


def test_full_template_set_embeddings_pairwise_distinct():
    params = init_params(2)
    vecs, names = [], []
    for kind, subtypes in SUBTYPES.items():
        for subtype in subtypes:
            label = InteractionLabel(0, 1, kind, subtype)
            for target in (0, 1):
                p = interaction_prompt(label, target)
                vecs.append(encode_prompt(p, params).vector)
                names.append((kind.value, subtype, target))
    for (i, a), (j, b) in itertools.combinations(enumerate(vecs), 2):
        assert np.abs(a - b).max() > 1e-9, (names[i], names[j])


def test_role_swap_changes_embedding():
    # the same words in swapped roles must not collide (position offsets)
    params = init_params(3)
    label = InteractionLabel(0, 1, InteractionKind.YIELDING, "intersection yielding")
    a = encode_prompt(interaction_prompt(label, 0), params)
    b = encode_prompt(interaction_prompt(label, 1), params)
    assert np.abs(a.vector - b.vector).max() > 1e-9


def test_fuse_language_properties():
    params = init_params(4)
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, params.config.d_model))
    e = encode_prompt(None, params)
    out = fuse_language(e, z, params)
    assert out.shape == (3, params.config.d_model)
    assert np.array_equal(out, fuse_language(e, z, params))
    # zero context and the null prompt give the bias path of the linear map
    z0 = np.zeros((1, params.config.d_model))
    base = fuse_language(e, z0, params)
    manual = np.concatenate([e.vector, np.zeros(params.config.d_model)]) @ \
        params["fuse_w"] + params["fuse_b"]
    np.testing.assert_allclose(base[0], manual, atol=1e-12)


def test_fuse_language_sensitive_to_prompt():
    params = init_params(5)
    rng = np.random.default_rng(1)
    z = rng.normal(size=(2, params.config.d_model))
    label = InteractionLabel(0, 1, InteractionKind.MERGING, "standard merge")
    cond = fuse_language(encode_prompt(interaction_prompt(label, 0), params), z, params)
    uncond = fuse_language(encode_prompt(None, params), z, params)
    assert np.abs(cond - uncond).max() > 1e-6


def test_fuse_dimension_mismatch():
    params = init_params(6)
    with pytest.raises(ValueError):
        fuse_language(LangEmbedding(np.zeros(3), False),
                      np.zeros((2, params.config.d_model)), params)
