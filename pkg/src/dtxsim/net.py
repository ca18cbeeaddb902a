"""Network latency model and round-trip-time monitoring.

Delays are one-way, per (src, dst) pair, drawn from the matrix that is
active at send time.  A profile may carry a schedule of matrix changes so
link quality can shift mid-run; messages already in flight keep the delay
they were assigned when sent.

Message loss is tied to crashes only: a message is dropped if either
endpoint has crashed (or restarted, i.e. changed incarnation) between send
and delivery.  With zero jitter, delivery over one channel is FIFO because
equal delays preserve the scheduling order tie-break.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .kernel import Kernel

PROBE = "probe"
PROBE_REPLY = "probe_reply"


@dataclass
class Msg:
    kind: str
    src: str
    dst: str
    tid: Optional[int] = None
    data: dict = field(default_factory=dict)


class LatencyModel:
    """One-way delay matrix in microseconds with an optional change schedule."""

    def __init__(self, sites: list[str], one_way_us: dict, jitter_pct: float = 0.0,
                 schedule: Optional[list[tuple[int, dict]]] = None):
        if jitter_pct < 0:
            raise ValueError(f"jitter_pct must be >= 0, got {jitter_pct}")
        self.sites = list(sites)
        self.jitter_pct = jitter_pct
        self._validate(one_way_us)
        entries = [(0, one_way_us)]
        for at, matrix in sorted(schedule or []):
            if at < 0:
                raise ValueError(f"schedule entry at {at}us is negative")
            self._validate(matrix)
            entries.append((at, matrix))
        self._entries = entries

    def _validate(self, matrix: dict) -> None:
        for src in self.sites:
            row = matrix.get(src)
            if row is None:
                raise ValueError(f"latency matrix missing row for site '{src}'")
            for dst in self.sites:
                if dst == src:
                    continue
                if dst not in row:
                    raise ValueError(f"latency matrix missing entry {src}->{dst}")
                if row[dst] < 0:
                    raise ValueError(f"negative delay for {src}->{dst}")

    def matrix_at(self, at: int) -> dict:
        active = self._entries[0][1]
        for eff, matrix in self._entries[1:]:
            if at >= eff:
                active = matrix
            else:
                break
        return active

    def one_way_us(self, src: str, dst: str, at: int) -> int:
        if src == dst:
            return self.matrix_at(at).get(src, {}).get(dst, 0)
        return self.matrix_at(at)[src][dst]

    def rtt_us(self, src: str, dst: str, at: int) -> int:
        return self.one_way_us(src, dst, at) + self.one_way_us(dst, src, at)


class Network:
    """Delivers messages between registered sites through the kernel."""

    JITTER_STREAM = "net.jitter"

    def __init__(self, kernel: Kernel, model: LatencyModel):
        self.kernel = kernel
        self.model = model
        self._handlers: dict[str, Callable[[Msg], None]] = {}
        self._epoch: dict[str, int] = {}
        self._up: dict[str, bool] = {}
        self.dropped = 0

    def register(self, site: str, handler: Callable[[Msg], None]) -> None:
        if site not in self.model.sites:
            raise ValueError(f"site '{site}' not in topology")
        self._handlers[site] = handler
        self._epoch.setdefault(site, 0)
        self._up.setdefault(site, True)

    def is_up(self, site: str) -> bool:
        return self._up.get(site, False)

    def epoch(self, site: str) -> int:
        return self._epoch.get(site, 0)

    def mark_down(self, site: str) -> None:
        self._up[site] = False
        self._epoch[site] = self._epoch.get(site, 0) + 1

    def mark_up(self, site: str) -> None:
        self._up[site] = True

    def send(self, msg: Msg) -> None:
        """Queue msg for delivery after the one-way delay active right now.

        A send from a crashed site is discarded.  Delivery checks that
        neither endpoint crashed while the message was in flight.
        """
        if msg.src not in self._handlers or msg.dst not in self._handlers:
            raise ValueError(f"send between unregistered sites {msg.src}->{msg.dst}")
        if not self._up[msg.src]:
            self.dropped += 1
            return
        base = self.model.one_way_us(msg.src, msg.dst, self.kernel.now)
        delay = base
        if self.model.jitter_pct > 0:
            j = self.kernel.rng(self.JITTER_STREAM).uniform(
                -self.model.jitter_pct, self.model.jitter_pct)
            delay = int(round(base * (1.0 + j)))
        src_epoch = self._epoch[msg.src]
        dst_epoch = self._epoch[msg.dst]

        def deliver():
            if (not self._up[msg.dst]
                    or self._epoch[msg.dst] != dst_epoch
                    or self._epoch[msg.src] != src_epoch):
                self.dropped += 1
                return
            self._handlers[msg.dst](msg)

        self.kernel.schedule_in(delay, msg.dst, f"recv:{msg.kind}", deliver)


class RttMonitor:
    """Round-trip estimator fed by periodic probes from one origin site.

    Each probe reply folds into an exponentially weighted moving average:
    est <- alpha * est + (1 - alpha) * sample.  Before the first reply the
    estimate falls back to the configured base round trip.  Estimates are
    volatile state of the origin; reset() models losing them in a crash.
    """

    def __init__(self, kernel: Kernel, net: Network, origin: str, targets: list[str],
                 interval_us: int = 10_000, alpha: float = 0.875):
        if not (0.0 <= alpha < 1.0):
            raise ValueError(f"alpha must be in [0, 1), got {alpha}")
        self.kernel = kernel
        self.net = net
        self.origin = origin
        self.targets = [t for t in targets if t != origin]
        self.interval_us = interval_us
        self.alpha = alpha
        self._est: dict[str, float] = {}
        self._started = False

    def start(self) -> None:
        if not self._started:
            self._started = True
            self._tick()

    def _tick(self) -> None:
        if self.net.is_up(self.origin):
            for dst in self.targets:
                sent_at = self.kernel.now
                self.net.send(Msg(PROBE, self.origin, dst, data={"sent_at": sent_at}))
        self.kernel.schedule_in(self.interval_us, self.origin, "probe_tick", self._tick)

    def on_reply(self, msg: Msg) -> None:
        sample = self.kernel.now - msg.data["sent_at"]
        prev = self._est.get(msg.src)
        if prev is None:
            self._est[msg.src] = float(sample)
        else:
            self._est[msg.src] = self.alpha * prev + (1.0 - self.alpha) * sample

    def estimated_rtt_us(self, dst: str) -> float:
        if dst == self.origin:
            return 0.0
        est = self._est.get(dst)
        if est is None:
            return float(self.net.model.rtt_us(self.origin, dst, self.kernel.now))
        return est

    def reset(self) -> None:
        self._est.clear()
