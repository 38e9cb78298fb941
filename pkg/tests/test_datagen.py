import itertools

import numpy as np
import pytest

from fedrouter.adapter import TrainConfig, evaluate, init_adapter, train_sgd
from fedrouter.datagen import (
    EmbeddingMatrix,
    ScenarioConfig,
    TaskSpec,
    build_scenario,
    export_embedding_csv,
    generate_task,
    import_embeddings,
    make_task_specs,
    read_embedding_csv,
    scenario_task_sets,
)


def test_zero_noise_rows_sit_on_offset():
    spec = TaskSpec(0, [0.0, 0.0], 2, [[1.0, 0.0], [1.0, 0.0]], 0.0, 0)
    x, labels = generate_task(spec, 50, seed=1)
    assert np.array_equal(x, np.tile([1.0, 0.0], (50, 1)))
    assert set(labels.tolist()) <= {0, 1}


def test_generate_task_deterministic():
    spec = make_task_specs(2, 8, seed=3)[0]
    a, b = generate_task(spec, 40, 9), generate_task(spec, 40, 9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_sample_mean_concentrates():
    # both classes share one offset, so every row has the same mean (0, 10) + (1, 0)
    spec = TaskSpec(0, [0.0, 10.0], 2, [[1.0, 0.0], [1.0, 0.0]], 1.0, 0)
    x, _ = generate_task(spec, 600, seed=2)
    assert np.all(np.abs(x.mean(axis=0) - [1.0, 10.0]) <= 3 * 1.0 / np.sqrt(600))


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(0, [0.0, 0.0], 3, [[1.0, 0.0]], 1.0, 0)
    with pytest.raises(ValueError):
        TaskSpec(0, [0.0, 0.0], 2, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 1.0, 0)
    spec = TaskSpec(0, [0.0, 0.0], 2, [[1.0, 0.0], [0.0, 1.0]], 1.0, 0)
    with pytest.raises(ValueError):
        generate_task(spec, 0, 1)


def test_centers_respect_separation():
    specs = make_task_specs(5, 12, separation=7.5, seed=4)
    for a, b in itertools.combinations(specs, 2):
        assert np.linalg.norm(a.center - b.center) >= 7.5 - 1e-9


def test_task_sets():
    assert scenario_task_sets("single", 8, 4) == [(0,), (0,), (1,), (1,), (2,), (2,), (3,), (3,)]
    assert scenario_task_sets("dual", 8, 4) == [(0, 1), (0, 1), (1, 2), (1, 2), (2, 3), (2, 3), (0, 3), (0, 3)]
    assert scenario_task_sets("all", 8, 4) == [(0, 1, 2, 3)] * 8
    with pytest.raises(ValueError):
        scenario_task_sets("single", 6, 4)


def test_all_scenario_equal_proportions():
    fed = build_scenario(ScenarioConfig(scenario="all", master_seed=1))
    for m in fed.train:
        assert len(m) == 600
        assert np.bincount(m.task_ids).tolist() == [150] * 4
    assert all(len(m) == 300 for m in fed.test)


def test_pairs_share_task_sets():
    for scenario in ("single", "dual", "all"):
        fed = build_scenario(ScenarioConfig(scenario=scenario, train_per_client=40, test_per_client=20))
        for i in range(0, 8, 2):
            assert set(fed.train[i].task_ids) == set(fed.train[i + 1].task_ids)
        assert all(len(set(m.task_ids)) == ScenarioConfig(scenario=scenario).tasks_per_client for m in fed.train)


def test_scenario_is_deterministic():
    cfg = ScenarioConfig(scenario="dual", master_seed=42, train_per_client=60, test_per_client=30)
    a, b = build_scenario(cfg), build_scenario(cfg)
    for x, y in zip(a.train + a.test, b.train + b.test):
        assert x.embeddings.tobytes() == y.embeddings.tobytes()
        assert x.equals(y)


def test_indivisible_rows_rejected():
    with pytest.raises(ValueError):
        build_scenario(ScenarioConfig(scenario="all", train_per_client=601))


def _nearest_center_misses(fed):
    centers = np.stack([t.center for t in fed.tasks])
    bad = total = 0
    for m in fed.train + fed.test:
        d = np.linalg.norm(m.embeddings[:, None, :] - centers[None], axis=2)
        bad += int((d.argmin(axis=1) != m.task_ids).sum())
        total += len(m)
    return bad, total


def test_nearest_task_center_exact_at_default_separation():
    for seed in range(3):
        fed = build_scenario(ScenarioConfig(scenario="all", separation=10.0, master_seed=seed))
        assert _nearest_center_misses(fed)[0] == 0


def test_nearest_task_center_miss_rate_at_eight_sigma():
    # a row is misrouted toward task j only if its noise projected on the unit
    # center difference exceeds s/2; union bound over the other tasks
    from math import erfc, sqrt

    s = 8.0
    bound = 3 * 0.5 * erfc((s / 2) / sqrt(2))
    bad = total = 0
    for seed in range(4):
        b, t = _nearest_center_misses(build_scenario(ScenarioConfig(scenario="all", separation=s, master_seed=seed)))
        bad, total = bad + b, total + t
    assert bad / total <= 3 * bound  # 3x slack for sampling noise on ~28k rows


def test_test_all_tasks_flag():
    fed = build_scenario(ScenarioConfig(scenario="single", test_all_tasks=True, master_seed=2))
    for m in fed.test:
        assert np.bincount(m.task_ids).tolist() == [75] * 4


def test_conflict_defeats_a_single_linear_head():
    specs = make_task_specs(2, 10, conflict=True, conflict_groups=2, seed=0)
    assert [s.conflict_group for s in specs] == [0, 1]
    parts = [generate_task(s, 400, seed=10 + s.task_id) for s in specs]
    cfg = TrainConfig(learning_rate=0.1, steps_per_round=1500, batch_size=32, seed=1)

    per_task = []
    for x, y in parts:
        per_task.append(evaluate(train_sgd(init_adapter(10, 4), x, y, cfg), x, y)[0])
    x_all = np.concatenate([p[0] for p in parts])
    y_all = np.concatenate([p[1] for p in parts])
    pooled = evaluate(train_sgd(init_adapter(10, 4), x_all, y_all, cfg), x_all, y_all)[0]
    assert pooled < min(per_task)
    assert pooled < 0.8  # a single head cannot fit both label layouts


def test_csv_parse_example(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("task_id,label,e0,e1\n0,1,0.5,-0.5\n")
    m = import_embeddings(p)
    assert len(m) == 1 and m.dim == 2
    assert m.task_ids.tolist() == [0] and m.labels.tolist() == [1]
    np.testing.assert_array_equal(m.embeddings, [[0.5, -0.5]])


@pytest.mark.parametrize(
    "body",
    [
        "task_id,label,e0,e1\n0,1,0.5,-0.5,2.0\n",  # ragged
        "task_id,label,e0,e1\n0,1,abc,1\n",  # non-numeric
        "",  # empty
        "task_id,label,e0,e1\n",  # header only
    ],
)
def test_csv_contract_violations(tmp_path, body):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ValueError):
        import_embeddings(p)


def test_csv_round_trip(tmp_path):
    fed = build_scenario(ScenarioConfig(scenario="dual", train_per_client=40, test_per_client=20, master_seed=9))
    for i, m in enumerate(fed.train):
        path = tmp_path / f"c{i}.csv"
        export_embedding_csv(m, path, clusters=np.arange(len(m)) % 2, comment="config_sha256=x master_seed=9")
        back, clusters = read_embedding_csv(path, client_id=i)
        assert back.equals(m)
        assert clusters.tolist() == (np.arange(len(m)) % 2).tolist()


def test_embedding_matrix_validation():
    with pytest.raises(ValueError):
        EmbeddingMatrix(0, np.zeros((0, 3)), [], [])
    with pytest.raises(ValueError):
        EmbeddingMatrix(0, np.zeros((2, 3)), [0], [0, 1])
