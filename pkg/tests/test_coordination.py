import math
import statistics

import pytest
from hypothesis import given, strategies as st

from cpow.chain import Transaction, address_from
from cpow.coordination import (
    ClockSample,
    LamportStamp,
    MutexReply,
    MutexRequest,
    RicartAgrawala,
    SharedTxPool,
    berkeley_sync,
    group_timestamp,
    pool_insert,
)
from cpow.errors import AlreadyWanted, NoSamples, NotHoldingMutex, SyncStale
from cpow.simnet.kernel import LatencyModel, Process, Simulator


def tx(i: int) -> Transaction:
    return Transaction(address_from("a"), address_from("b"), i, i)


class TestRicartAgrawala:
    def test_single_member_immediate(self):
        ra = RicartAgrawala("a", [])
        assert ra.request() == [] and ra.held

    def test_equal_counters_order_by_node(self):
        a, b = RicartAgrawala("A", ["B"]), RicartAgrawala("B", ["A"])
        a.clock = b.clock = 2
        (_, ra_req), = a.request()
        (_, rb_req), = b.request()
        assert ra_req.stamp == LamportStamp(3, "A") and rb_req.stamp == LamportStamp(3, "B")
        # A defers B, B replies to A
        assert a.on_request("B", rb_req.stamp) == []
        replies = b.on_request("A", ra_req.stamp)
        assert replies == [("A", MutexReply("B"))]
        assert a.on_reply("B") and a.held and not b.held
        released = a.release()
        assert released == [("B", MutexReply("A"))]
        assert b.on_reply("A") and b.held

    def test_double_request(self):
        ra = RicartAgrawala("a", ["b"])
        ra.request()
        with pytest.raises(AlreadyWanted):
            ra.request()

    def test_two_node_trace_in_simulator(self):
        """A holds, B's request is deferred, A releases and B enters second."""

        class Node(Process):
            def __init__(self, nid, peer, want_at, hold):
                self.id, self.ra, self.want_at, self.hold = nid, RicartAgrawala(nid, [peer]), want_at, hold

            def handle(self, sim, ev):
                p = ev.payload
                if p == "want":
                    out = self.ra.request()
                    if self.ra.held:
                        self.enter(sim)
                    for dst, m in out:
                        sim.send(self.id, dst, m)
                elif p == "release":
                    entries.append((sim.now, self.id, "exit"))
                    for dst, m in self.ra.release():
                        sim.send(self.id, dst, m)
                elif isinstance(p, MutexRequest):
                    for dst, m in self.ra.on_request(ev.src, p.stamp):
                        sim.send(self.id, dst, m)
                elif isinstance(p, MutexReply):
                    if self.ra.on_reply(ev.src):
                        self.enter(sim)

            def enter(self, sim):
                entries.append((sim.now, self.id, "enter"))
                sim.schedule(self.id, self.hold, "release")

        entries = []
        sim = Simulator(0, LatencyModel(2, 0))
        sim.add(Node("A", "B", 0, 10))
        sim.add(Node("B", "A", 5, 10))
        sim.schedule("A", 0, "want")
        sim.schedule("B", 5, "want")
        sim.introspect("mutex", lambda s: sum(n.ra.held for n in s.processes.values()) <= 1)
        sim.run()
        assert [(who, what) for _, who, what in entries] == [
            ("A", "enter"), ("A", "exit"), ("B", "enter"), ("B", "exit")]
        # A enters once B's reply arrives (t=2+2); B waits for A's release at 14, reply lands at 16
        assert [t for t, _, _ in entries] == [4, 14, 16, 26]


class TestSharedPool:
    def test_append_and_duplicate(self):
        ra = RicartAgrawala("a", [])
        ra.request()
        pool = pool_insert(SharedTxPool(), tx(1), ra)
        pool_insert(pool, tx(2), ra)
        assert pool.ordered == [tx(1), tx(2)]
        pool_insert(pool, tx(1), ra)
        assert pool.ordered == [tx(1), tx(2)]

    def test_requires_mutex(self):
        with pytest.raises(NotHoldingMutex):
            pool_insert(SharedTxPool(), tx(1), RicartAgrawala("a", ["b"]))
        with pytest.raises(NotHoldingMutex):
            pool_insert(SharedTxPool(), tx(1), None)

    @given(st.permutations(list(range(8))))
    def test_replicas_converge_any_arrival_order(self, order):
        pool = SharedTxPool()
        for i in order:
            pool.receive(i, tx(i))
        assert pool.ordered == [tx(i) for i in range(8)]


class TestBerkeley:
    def samples(self, times):
        return [ClockSample(f"n{i}", t) for i, t in enumerate(times)]

    def test_mean(self):
        r = berkeley_sync(self.samples([10, 20, 30]))
        assert r.reference == 20
        assert [r.offsets[f"n{i}"] for i in range(3)] == [10, 0, -10]

    def test_single(self):
        r = berkeley_sync(self.samples([77]))
        assert r.offsets == {"n0": 0} and r.reference == 77

    def test_outlier_dropped(self):
        r = berkeley_sync(self.samples([10, 20, 30, 10000]), outlier_bound=100)
        assert r.reference == 20 and "n3" not in r.used

    def test_empty(self):
        with pytest.raises(NoSamples):
            berkeley_sync([])

    def test_timestamp_is_mean_with_unbounded_filter(self):
        base = 1_000_000
        s = self.samples([base - 50, base + 50, base + 20, base - 20])
        r = berkeley_sync(s, outlier_bound=math.inf, height=3)
        assert group_timestamp(r, 3) == statistics.mean(x.reported_time for x in s)

    def test_stale(self):
        r = berkeley_sync(self.samples([1, 2]), height=4)
        with pytest.raises(SyncStale):
            group_timestamp(r, 5)

    def test_never_before_parent(self):
        r = berkeley_sync(self.samples([10, 20]), height=1)
        assert group_timestamp(r, 1, parent_timestamp=100) == 100

    @given(st.lists(st.integers(0, 10**9), min_size=1, max_size=9))
    def test_adjusted_clocks_agree(self, times):
        s = self.samples(times)
        r = berkeley_sync(s)
        adjusted = r.adjusted(s)
        assert set(adjusted.values()) == {r.reference}
        # everyone computing from the same samples in any order gets the same result
        assert berkeley_sync(list(reversed(s))) == r
