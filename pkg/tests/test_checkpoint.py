from __future__ import annotations

import json

import numpy as np
import pytest

from diffaccel.checkpoint import Checkpoint, same_weights
from diffaccel.core.mdlrc import MdlrcConfig, OptimizerState, step
from diffaccel.core.models import DenoiserMLP, MLPSpec
from diffaccel.errors import ArtifactParseError, ContractViolation
from diffaccel.utils import SeedStreams, decode_array, encode_array


def make_checkpoint(seed=0):
    streams = SeedStreams.derive(seed)
    model = DenoiserMLP.init(MLPSpec(2, 2, hidden=(4,), time_embed_dim=2), streams.init)
    cfg = MdlrcConfig(total_iterations=10)
    state = OptimizerState.init(model.params.values, cfg)
    values, state = step(state, model.params.values, streams.noise.standard_normal(len(model.params)), cfg)
    return Checkpoint(
        config={"run": {"global_seed": seed}},
        iteration=1,
        params=model.params.with_values(values),
        state=state,
        architecture=model.spec,
        target=str(model.target),
        rng_state=streams.get_state(),
        loss_window=(0.5, 1),
    )


def test_save_and_load_preserve_everything(tmp_path):
    ckpt = make_checkpoint()
    path = ckpt.save(tmp_path / "deep" / "ckpt.json")
    loaded = Checkpoint.load(path)
    assert same_weights(ckpt, loaded)
    assert loaded.iteration == 1
    assert loaded.architecture == ckpt.architecture
    assert loaded.params.layout == ckpt.params.layout
    assert loaded.state.beta1_product == ckpt.state.beta1_product
    assert loaded.loss_window == (0.5, 1)
    assert not (tmp_path / "deep" / "ckpt.json.tmp").exists()


def test_restored_streams_continue_identically(tmp_path):
    ckpt = make_checkpoint(3)
    loaded = Checkpoint.load(ckpt.save(tmp_path / "c.json"))
    a, b = SeedStreams.derive(0), SeedStreams.derive(0)
    a.set_state(ckpt.rng_state)
    b.set_state(loaded.rng_state)
    np.testing.assert_array_equal(a.noise.standard_normal(5), b.noise.standard_normal(5))


def test_same_weights_detects_changes():
    a = make_checkpoint(0)
    assert same_weights(a, a)
    assert not same_weights(a, make_checkpoint(1))


def test_ema_params_view():
    ckpt = make_checkpoint()
    np.testing.assert_array_equal(ckpt.ema_params.values, ckpt.state.ema_params)
    assert ckpt.ema_params.layout == ckpt.params.layout


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ArtifactParseError):
        Checkpoint.load(bad)

    data = make_checkpoint().to_dict()
    del data["layout"]
    bad.write_text(json.dumps(data))
    with pytest.raises(ArtifactParseError) as info:
        Checkpoint.load(bad)
    assert info.value.field == "layout"

    data = make_checkpoint().to_dict()
    data["schema_version"] = 99
    bad.write_text(json.dumps(data))
    with pytest.raises(ArtifactParseError):
        Checkpoint.load(bad)


@pytest.mark.parametrize(
    "corrupt",
    [
        lambda d: d["params"].update(data="abc"),
        lambda d: d["optimizer"]["m"].update(shape=[999]),
        lambda d: d.update(loss_window=[0.5]),
        lambda d: d.update(loss_window=3),
        lambda d: d.update(iteration="ten"),
    ],
)
def test_corrupt_fields_are_parse_errors(tmp_path, corrupt):
    data = make_checkpoint().to_dict()
    corrupt(data)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    with pytest.raises(ArtifactParseError) as info:
        Checkpoint.load(bad)
    assert info.value.path == bad


def test_array_codec_is_exact():
    array = np.array([[1e-300, -0.0], [np.pi, 1.0 / 3.0]])
    decoded = decode_array(encode_array(array))
    assert decoded.dtype == np.float64
    np.testing.assert_array_equal(decoded, array)
    with pytest.raises(ContractViolation):
        decode_array({**encode_array(array), "dtype": "<f4"})


def test_seed_streams_are_independent():
    a = SeedStreams.derive(5)
    b = SeedStreams.derive(5, init_seed=11)
    np.testing.assert_array_equal(a.data.random(4), b.data.random(4))
    assert not np.array_equal(a.init.random(4), b.init.random(4))
    assert not np.array_equal(SeedStreams.derive(5).data.random(4), SeedStreams.derive(5).noise.random(4))
