from dygmamba.bench import bench_scan, format_bench


def test_rows_and_overhead_floor():
    rows = bench_scan((1, 16, 32), batch=1, channels=4, d_ssm=2, repeats=2, attention=False)
    assert [r.L for r in rows] == [1, 16, 32]
    assert rows[0].scan_ratio is None and rows[1].scan_ratio is None
    assert rows[2].scan_ratio > 0 and rows[0].attention_seconds is None
    table = format_bench(rows)
    assert table.splitlines()[0].split() == ["L", "scan_s", "scan_ratio", "attention_s", "attention_ratio"]


def test_quadratic_contrast():
    rows = bench_scan((512, 1024))
    assert 1.6 <= rows[1].scan_ratio <= 2.6
    assert 3.2 <= rows[1].attention_ratio <= 5.2
