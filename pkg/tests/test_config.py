import json

import pytest

from feras import config as cfgmod
from feras.config import ConfigError, ExperimentConfig
from feras.synthetic import SyntheticSpec

FULL = {
    "dataset": {"synthetic": {"blocks": 3, "nodes_per_block": 20, "seed": 2}},
    "variant": "share_weights_only",
    "output_dir": "out/x",
    "train": {"epochs": 7, "n_hosts": 4, "q": 3, "pi_private": 0.25, "mode": "parallel", "eval_every": 2,
              "seed": 5, "exact_split": True, "barrier": False, "inference": "local"},
    "sampler": {"kind": "mrw", "node_budget": 30, "edge_budget": 10, "roots": 5, "depth": 3, "seed": 1},
    "model": {"hidden_dims": [6, 5], "eta": 0.05, "lambda": 0.1, "loss_kind": "squared",
              "p_share_layer": 1, "dense_head": False},
    "certify": {"param_scale": 0.25, "max_dim": 500},
    "sweep": {"axis": "kappa", "values": [0.0, 0.3], "variants": ["feras", "isolated"], "seeds": [0, 1],
              "threshold": 0.8},
    "visibility": "vis.csv",
}


class TestRoundTrip:
    def test_parse_serialize_parse(self):
        exp = cfgmod.loads(json.dumps(FULL))
        again = cfgmod.loads(exp.dumps())
        assert again.to_dict() == exp.to_dict()
        assert again.train.sampler == exp.train.sampler and again.train.hyper == exp.train.hyper

    def test_fields_parsed(self):
        exp = cfgmod.loads(json.dumps(FULL))
        assert isinstance(exp.dataset, SyntheticSpec) and exp.dataset.blocks == 3
        assert exp.train.hyper.lam == 0.1 and exp.train.hidden_dims == (6, 5)
        assert exp.train.sampler.kind == "mrw" and not exp.train.dense_head
        assert exp.sweep.values == (0.0, 0.3)

    def test_minimal_defaults(self):
        exp = cfgmod.loads('{"dataset": "data/sbm"}')
        assert exp.dataset == "data/sbm" and exp.train.q == 10 and exp.train.hidden_dims == (64, 64)

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(FULL))
        assert cfgmod.load(path).train.epochs == 7


class TestErrors:
    @pytest.mark.parametrize("text", [
        "not json",
        "[]",
        '{"train": {}}',
        '{"dataset": "d", "extra": 1}',
        '{"dataset": "d", "train": {"lr": 1}}',
        '{"dataset": "d", "model": {"loss_kind": "hinge"}}',
        '{"dataset": "d", "sampler": {"kind": "cluster"}}',
        '{"dataset": "d", "variant": "fedavg"}',
        '{"dataset": "d", "sweep": {"axis": "eta", "values": [1]}}',
        '{"dataset": {"file": "x"}}',
        '{"dataset": {"synthetic": {"p_in": 0.1, "p_out": 0.5}}}',
        '{"dataset": "d", "certify": {"bogus": 1}}',
    ])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            cfgmod.loads(text)

    def test_variant_validation_direct(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(dataset="d", variant="nope")
