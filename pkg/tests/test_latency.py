"""End-to-end latency: device emission to client Data receipt, real time.

The virtual clock is bridged to real time (pump speed 1.0) and the
simulator's emit hook records the real emission instant per frame; two
subscribed clients stamp arrivals. Median must stay under 20 ms and the
99th percentile under 50 ms at 250 Hz.
"""

import threading
import time

import numpy as np

from conftest import Harness
from cytond.config import DaemonConfig
from cytond.sim import SimConfig, Sine


def test_end_to_end_latency_two_clients():
    h = Harness(SimConfig(waveforms=[Sine(10.0, 50.0)] + [None] * 7), DaemonConfig())
    emit_real: dict[int, float] = {}
    h.sim.emit_hook = lambda slot, due: emit_real.__setitem__(slot, time.monotonic())
    try:
        h.start(pump_speed=1.0, pump_step=0.002)
        clients = [h.connect(), h.connect()]
        for c in clients:
            c.send({"type": "subscribe", "stream": "raw"})
            c.recv_type("status")

        latencies: list[list[float]] = [[], []]
        stop = threading.Event()

        def reader(i: int) -> None:
            c = clients[i]
            while not stop.is_set():
                try:
                    msg = c.recv()
                except OSError:
                    return
                if msg is None:
                    return
                now = time.monotonic()
                if msg["type"] != "data":
                    continue
                for k in range(len(msg["frames"])):
                    t_emit = emit_real.get(msg["first_index"] + k)
                    if t_emit is not None:
                        latencies[i].append(now - t_emit)

        threads = [threading.Thread(target=reader, args=(i,), daemon=True) for i in (0, 1)]
        for t in threads:
            t.start()
        clients[0].send({"type": "command", "action": "start"})
        time.sleep(5.0)
        clients[0].send({"type": "command", "action": "stop"})
        time.sleep(0.3)
        stop.set()
    finally:
        h.close()

    for i, lat in enumerate(latencies):
        assert len(lat) > 800, f"client {i} saw only {len(lat)} frames"
        lat_arr = np.array(lat)
        median = float(np.median(lat_arr))
        p99 = float(np.percentile(lat_arr, 99))
        print(f"client {i}: n={len(lat)} median={median * 1000:.1f} ms p99={p99 * 1000:.1f} ms")
        assert median < 0.020, f"median latency {median * 1000:.1f} ms"
        assert p99 < 0.050, f"p99 latency {p99 * 1000:.1f} ms"
