"""Run both parties of a circuit in one process over a socket pair (tests and tooling)."""

from __future__ import annotations

import socket
import threading

from ..runtime.framing import Channel
from .circuit import EVALUATOR, GARBLER, CircuitGraph
from .ot import ObliviousTransferConfig
from .twoparty import run_two_party

DEALER = ObliviousTransferConfig("insecure_dealer", unsafe=True)


class LocalPair:
    """A garbler and an evaluator joined by one socket pair.

    Consecutive runs share the channel, so IKNP base transfers happen once per pair.
    """

    def __init__(self, ot: ObliviousTransferConfig = DEALER):
        self.ot = ot
        self._a, self._b = socket.socketpair()
        self.garbler, self.evaluator = Channel(self._a), Channel(self._b)

    def run(self, circuit: CircuitGraph, garbler_inputs: dict, evaluator_inputs: dict, seed=0,
            evaluator_circuit: CircuitGraph | None = None):
        """Returns (garbler outputs, evaluator outputs); exceptions from either side are re-raised."""
        box = {}

        def garbler():
            try:
                box["g"] = run_two_party(GARBLER, circuit, garbler_inputs, self.garbler, self.ot, seed=f"{seed}-g")
            except BaseException as exc:  # surfaced to the caller below
                box["g_exc"] = exc
                self._shutdown(self._a)

        t = threading.Thread(target=garbler, daemon=True)
        t.start()
        try:
            box["e"] = run_two_party(EVALUATOR, evaluator_circuit or circuit, evaluator_inputs, self.evaluator,
                                     self.ot, seed=f"{seed}-e")
        except BaseException as exc:
            box["e_exc"] = exc
            self._shutdown(self._b)
        t.join()
        if "e_exc" in box:
            raise box["e_exc"]
        if "g_exc" in box:
            raise box["g_exc"]
        return box["g"], box["e"]

    @staticmethod
    def _shutdown(sock):
        try:
            sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass

    def close(self):
        self.garbler.close()
        self.evaluator.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_local(circuit: CircuitGraph, garbler_inputs: dict, evaluator_inputs: dict,
              ot: ObliviousTransferConfig = DEALER, seed=0, evaluator_circuit: CircuitGraph | None = None):
    """One run over a fresh pair: (garbler outputs, evaluator outputs)."""
    with LocalPair(ot) as pair:
        return pair.run(circuit, garbler_inputs, evaluator_inputs, seed, evaluator_circuit)
