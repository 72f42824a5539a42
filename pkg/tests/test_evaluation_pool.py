import logging
import os
import time

import pytest

from config import parse_threads
from evaluation_pool import EvaluationPool


def slow_square(x):
    # later items finish first
    time.sleep(0.01 * (5 - x))
    return x * x


def fails_on_three(x):
    if x == 3:
        raise ValueError('three')
    return x


async def test_map_preserves_order(pool):
    assert await pool.map(slow_square, range(5)) == [0, 1, 4, 9, 16]


async def test_map_returns_exceptions_in_place(pool):
    results = await pool.map(fails_on_three, range(5), batch_id='with failure')
    assert results[:3] == [0, 1, 2]
    assert isinstance(results[3], ValueError)
    assert results[4] == 4
    assert pool.get_status()['failures'] == 1


async def test_map_empty(pool):
    assert await pool.map(slow_square, []) == []
    assert pool.get_status()['last_batch']['size'] == 0


def test_map_sync_matches_map(pool):
    results = pool.map_sync(fails_on_three, range(5))
    assert [r for i, r in enumerate(results) if i != 3] == [0, 1, 2, 4]
    assert isinstance(results[3], ValueError)


def test_context_manager_closes_executor():
    with EvaluationPool(threads=2) as p:
        p.map_sync(slow_square, [4])
        assert p.get_status()['running']
    assert not p.get_status()['running']


async def test_status_counts(pool):
    await pool.map(slow_square, range(3), batch_id='first')
    pool.map_sync(slow_square, range(2), batch_id='second')
    status = pool.get_status()
    assert status['threads'] == 2
    assert status['batch_count'] == 2
    assert status['items_evaluated'] == 5
    assert status['last_batch']['id'] == 'second'
    assert status['last_batch']['elapsed'] >= 0


@pytest.mark.parametrize('threads', [0, None])
def test_thread_count_defaults_to_at_least_one(threads):
    assert EvaluationPool(threads=threads).threads >= 1


def test_status_keeps_only_the_last_batch(pool):
    for i in range(50):
        pool.map_sync(fails_on_three, range(4), batch_id=f"batch {i}")
    status = pool.get_status()
    assert status['batch_count'] == 50
    assert status['items_evaluated'] == 200
    assert status['failures'] == 50
    assert status['last_batch']['id'] == 'batch 49'
    assert not hasattr(pool, 'batches')


@pytest.mark.parametrize('value', ['four', '0', '-2', '1.5'])
def test_malformed_thread_setting_falls_back(value, caplog):
    with caplog.at_level(logging.WARNING):
        assert parse_threads(value) == (os.cpu_count() or 1)
    assert 'ROAFLOW_THREADS' in caplog.text


def test_thread_setting():
    assert parse_threads('3') == 3
    assert parse_threads(None) == (os.cpu_count() or 1)
