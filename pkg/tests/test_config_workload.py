import json
import random

import pytest

from epochocc.config import (ConfigError, SimConfig, config_from_dict, config_to_dict,
                             loads_config, with_overrides)
from epochocc.metrics import NA, percentile, read_csv, summarize, write_csv
from epochocc.procedures import decode_args
from epochocc.workload import INITIAL_STOCK, Workload, ZipfSampler, script_steps
from epochocc.config import WorkloadConfig


def test_defaults_validate_and_round_trip():
    cfg = SimConfig().validate()
    assert config_from_dict(config_to_dict(cfg)) == cfg
    rc = cfg.replica_config()
    assert rc.consensus.epoch_interval_us == 15_000 and rc.batch_timeout_us == 5_000


@pytest.mark.parametrize("doc, field", [
    ('{"n": 2, "f": 1}', "n"),
    ('{"nodes": 3}', "nodes"),
    ('{"workload": {"zipf": -1}}', "workload.zipf"),
    ('{"workload": {"kind": "tpch"}}', "workload.kind"),
    ('{"latency": {"base_ms": "fast"}}', "latency.base_ms"),
    ('{"crashes": [{"replica": 7, "at_ms": 1}]}', "replica"),
    ('{"hc": {"threshold": 1.5}}', "hc.threshold"),
    ('{"n": 3,', "line 1"),
])
def test_bad_documents_name_the_field(doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        loads_config(doc)


def test_overrides_use_dotted_paths():
    cfg = with_overrides(SimConfig(), **{"workload.zipf": 0.9, "latency.base_ms": 25})
    assert cfg.workload.zipf == 0.9 and cfg.latency.base_ms == 25
    with pytest.raises(ConfigError):
        with_overrides(SimConfig(), **{"workload.nope": 1})


def test_mean_rtt_from_matrix():
    cfg = loads_config(json.dumps({"latency": {"matrix_ms": [[0, 10, 20], [10, 0, 30], [20, 30, 0]]}}))
    assert cfg.mean_rtt_us() == 40_000


# -- workloads --------------------------------------------------------------------------

def test_zipf_uniform_and_skewed():
    rng = random.Random("z")
    uni = ZipfSampler(10, 0.0)
    skew = ZipfSampler(10, 1.5)
    u = [uni.sample(rng) for _ in range(5000)]
    s = [skew.sample(rng) for _ in range(5000)]
    assert set(u) == set(range(10)) and set(s) <= set(range(10))
    assert s.count(0) > 2 * u.count(0)


def test_ycsb_same_seed_same_stream():
    w1, w2 = Workload(WorkloadConfig(records=100)), Workload(WorkloadConfig(records=100))
    r1, r2 = random.Random("a"), random.Random("a")
    assert [w1.next(r1) for _ in range(20)] == [w2.next(r2) for _ in range(20)]


def test_hot_keys_confine_accesses():
    w = Workload(WorkloadConfig(records=1000, hot_keys=5, ops_per_txn=4))
    keys = set()
    rng = random.Random(1)
    for _ in range(100):
        keys |= {op[1] for op in decode_args(w.next(rng).params)["ops"]}
    assert len(keys) <= 5


def test_tpcc_initial_store_and_procs_run():
    c = WorkloadConfig(kind="micro_tpcc", warehouses=1, districts=2, customers=3, items=10)
    w = Workload(c, seed=3)
    store = w.initial_store()
    assert store.get(b"s:0:4:qty") == b"%d" % INITIAL_STOCK
    kinds = {w.next(random.Random(i)).name for i in range(20)}
    assert kinds == {"tpcc_new_order", "tpcc_payment"}


def test_script_steps_sorted_by_time():
    c = WorkloadConfig(kind="custom", script=[
        {"at_ms": 5, "replica": 1, "proc": "put", "args": {"key": "a", "value": "1"}},
        {"at_ms": 1, "replica": 0, "proc": "increment", "args": {"key": "a"}}])
    steps = script_steps(c)
    assert [(t, r) for t, r, _ in steps] == [(1000, 0), (5000, 1)]


# -- metrics -----------------------------------------------------------------------------

def test_percentile_nearest_rank():
    xs = list(range(1, 101))
    assert percentile(xs, 50) == 50 and percentile(xs, 99) == 99 and percentile(xs, 100) == 100
    assert percentile([], 50) is None and percentile([7], 1) == 7


def test_summary_throughput_and_empty_case():
    s = summarize([1000, 2000, 3000], 2_000_000, [])
    assert s.throughput_tps == 1.5 and s.p50_ms == 2.0 and s.reexec_fraction is None
    assert summarize([], 0, []).throughput_tps == 0.0


def test_csv_round_trip(tmp_path):
    p = tmp_path / "m.csv"
    write_csv(p, ["a", "b"], [["1", NA], ["x,y", "2"]])
    assert read_csv(p) == [{"a": "1", "b": NA}, {"a": "x,y", "b": "2"}]
