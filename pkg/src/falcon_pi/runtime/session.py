"""Client and server sessions over the framed wire protocol.

Message order::

    C->S HELLO        {"protocol", "accuracy", "ot"}
    S->C PARAMS       HE parameters (JSON)          mismatch: ERROR from the client
    C->S PARAMS       parameter digest + public key
    S->C MODEL_META   public layer plan (JSON)
    --- setup: server transforms filters, draws every mask, garbles every circuit
    S->C GC_TABLES    one frame per circuit, final outputs' decode bits withheld
    --- online, per step
    C->S CT_UP        encrypted spectrum of the client's share          (linear)
    S->C CT_DOWN      masked per-filter products                        (linear)
    S<->C SHARE_MSG / OT_MSG   garbled evaluation                      (block, final)
    S->C RESULT       withheld decode bits
    C->S BYE
"""

from __future__ import annotations

import json
import os
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .._rng import Prng
from ..gc.boolean import compile_circuit
from ..gc.garble import garble
from ..gc.ot import ObliviousTransferConfig
from ..gc.twoparty import (
    decode_map_bytes, evaluator_online, garbler_online, parse_decode_map, recv_tables, send_tables,
)
from ..he.bfv import (
    HEError, HEParams, PackedCiphertext, PublicKey, ciphertext_size, keygen,
)
from ..layers.circuits import bias_share, block_mask_input
from ..layers.linear import (
    EncryptedFreqTensor, ServerContext, add_share, as_conv, client_conv_output, encrypt_share,
    new_mask, prepare_filters, secure_conv_general,
)
from ..model import ModelDescriptor
from ..reference import PredictionResult, quantize
from ..softmax import local_exp, probability
from .framing import (
    Channel, CapacityError, CryptoError, ErrorCode, FrameType, ProtocolError, RemoteError,
)
from .pipeline import BlockStep, LinearStep, Plan, compile_plan, plan_circuits
from .transcript import CircuitRecord, Transcript

PROTOCOL_VERSION = 1
DEFAULT_ADDRESS = ("127.0.0.1", 7311)


@dataclass
class SessionConfig:
    params: HEParams = field(default_factory=HEParams)
    accuracy: int | None = None
    argmax_only: bool = False
    ot: ObliviousTransferConfig = field(default_factory=ObliviousTransferConfig)
    seed: bytes | int | str | None = None
    address: tuple = DEFAULT_ADDRESS
    share_log: list | None = None  # in-process diagnostics: (step, role, share) tuples
    rerandomize: bool = True

    def rng(self, role: str) -> Prng:
        seed = self.seed
        if seed is None and os.environ.get("FALCON_SEED"):
            seed = os.environ["FALCON_SEED"]
        return Prng(seed, f"session-{role}")


def _params_doc(params: HEParams) -> dict:
    return {"n": params.n, "p": params.p, "moduli": list(params.moduli), "noise_stddev": params.noise_stddev,
            "digest": params.digest.hex()}


def _pack_cts(cts) -> bytes:
    return struct.pack("<I", len(cts)) + b"".join(c.to_bytes() for c in cts)


def _unpack_cts(raw: bytes, params: HEParams, expected: int) -> list[PackedCiphertext]:
    (count,) = struct.unpack_from("<I", raw)
    size = ciphertext_size(params)
    if count != expected or len(raw) != 4 + count * size:
        raise ProtocolError(f"expected {expected} ciphertexts")
    return [PackedCiphertext.from_bytes(raw[4 + i * size:4 + (i + 1) * size], params) for i in range(count)]


def _final_withheld(circ) -> tuple:
    return tuple(n for n in ("t", "den") if any(p.name == n for p in circ.outputs))


def _log(cfg: SessionConfig, step, role, data):
    if cfg.share_log is not None:
        cfg.share_log.append((step, role, np.array(data, dtype=np.int64)))


def _guard(ch: Channel, fn):
    """Run a session body; report failures to the peer with the matching error code."""
    try:
        return fn()
    except RemoteError:
        raise
    except CapacityError as exc:
        ch.send_error(ErrorCode.CAPACITY, str(exc))
        raise
    except (HEError, CryptoError) as exc:
        ch.send_error(ErrorCode.CRYPTO, str(exc))
        raise CryptoError(str(exc)) from exc
    except ProtocolError as exc:
        ch.send_error(ErrorCode.PROTOCOL, str(exc))
        raise
    except ValueError as exc:
        ch.send_error(ErrorCode.PROTOCOL, str(exc))
        raise ProtocolError(str(exc)) from exc


# ---------------------------------------------------------------------------
# server


class ServerSession:
    def __init__(self, model: ModelDescriptor, ch: Channel, config: SessionConfig):
        self.model = quantize(model)
        self.ch = ch
        self.cfg = config
        self.params = config.params
        self.rng = config.rng("server")
        self.events: list[str] = []
        self.transcript: Transcript | None = None

    def run(self) -> Transcript:
        return _guard(self.ch, self._run)

    def _run(self) -> Transcript:
        ch, params, cfg = self.ch, self.params, self.cfg
        clock = {}
        t0 = time.perf_counter()
        hello = json.loads(ch.recv(FrameType.HELLO))
        if hello.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError("unsupported protocol version")
        if hello.get("ot") != cfg.ot.mode:
            raise ProtocolError(f"OT mode mismatch: server uses {cfg.ot.mode}")
        ch.send(FrameType.PARAMS, json.dumps(_params_doc(params)).encode())
        raw = ch.recv(FrameType.PARAMS)
        if raw[:32] != params.digest:
            raise ProtocolError("HE parameter mismatch")
        pk = PublicKey.from_bytes(raw[32:], params)
        plan = compile_plan(self.model, hello.get("accuracy"), cfg.argmax_only, params.p)
        ch.send(FrameType.MODEL_META, json.dumps(plan.to_meta()).encode())
        clock["handshake"] = time.perf_counter() - t0

        # setup
        t0 = time.perf_counter()
        ch.phase = "setup"
        ctx = ServerContext(params, pk, self.rng.child("he"), rerandomize=cfg.rerandomize)
        filters, masks, block_r = {}, {}, {}
        shapes = self.model.shapes
        for k, step in enumerate(plan.steps):
            if isinstance(step, LinearStep):
                conv = as_conv(self.model.layers[step.layer], shapes[step.layer])
                filters[k] = prepare_filters(conv, step.geometry(), params)
                lay = step.layout(params.n)
                masks[k] = [new_mask(ctx, lay) for _ in range(conv.filters)]
            elif isinstance(step, BlockStep):
                block_r[k] = self.rng.uniform(params.p, int(np.prod(step.out_shape)))
        self.events.append("filters")
        self.events.append("masks")
        sm = plan.softmax_config()
        if sm is not None:
            r_soft = self.rng.uniform(sm.Q, sm.K)
            mask_bits = self.rng.bits(sm.K)
        circuits = plan_circuits(plan, params.p)
        garbled = [garble(c, self.rng.bytes(32)) for c in circuits]
        records = [CircuitRecord.of(c, g.netlist) for c, g in zip(circuits, garbled)]
        for c, g in zip(circuits, garbled):
            send_tables(ch, g, withhold=_final_withheld(c))
        self.events.append("garble")
        clock["setup"] = time.perf_counter() - t0

        # online
        t0 = time.perf_counter()
        ch.phase = "online"
        self.events.append("online")
        gc_iter = iter(garbled)
        s_share = None
        ct_up, ct_down = [], []
        ot_rng = self.rng.child("ot")
        for k, step in enumerate(plan.steps):
            if isinstance(step, LinearStep):
                lay = step.layout(params.n)
                cts = _unpack_cts(ch.recv(FrameType.CT_UP), params, lay.ciphertexts)
                ct = EncryptedFreqTensor.from_list(lay, cts)
                if s_share is not None:
                    ct = add_share(ct, s_share.reshape(step.in_shape), step.geometry(), ctx)
                outs, share = secure_conv_general(ct, filters.pop(k), ctx, masks=masks.pop(k))
                down = [c for o in outs for c in o.ciphertexts]
                ch.send(FrameType.CT_DOWN, _pack_cts(down))
                ct_up.append(len(cts))
                ct_down.append(len(down))
                s_share = share.data
                _log(cfg, k, "server", s_share)
            elif isinstance(step, BlockStep):
                r = block_r.pop(k)
                garbler_online(ch, next(gc_iter), {"x_s": s_share.reshape(-1), "r_neg": block_mask_input(r, params.p, plan.frac_bits)},
                               cfg.ot, ot_rng)
                s_share = r
                _log(cfg, k, "server", r.reshape(step.out_shape))
        finals = list(gc_iter)
        x_s = s_share.reshape(-1)
        if sm is None:
            garbler_online(ch, finals[0], {"x_s": x_s}, cfg.ot, ot_rng)
        else:
            garbler_online(ch, finals[0], {"x_s": x_s, "r_neg": (-r_soft) % sm.Q, "mask": mask_bits}, cfg.ot, ot_rng)
            garbler_online(ch, finals[1], {"e_s": local_exp(r_soft, sm), "f_s": mask_bits}, cfg.ot, ot_rng)
        parts = []
        for c, g in zip(circuits[-len(finals):], finals):
            blob = decode_map_bytes(g, _final_withheld(c))
            parts.append(struct.pack("<I", len(blob)) + blob)
        ch.send(FrameType.RESULT, b"".join(parts))
        ch.recv(FrameType.BYE)
        clock["online"] = time.perf_counter() - t0
        self.transcript = Transcript.from_channel(
            ch, seconds=clock, he_ops=dict(ctx.log), circuits=records, ct_up=ct_up, ct_down=ct_down)
        return self.transcript


# ---------------------------------------------------------------------------
# client


class ClientSession:
    def __init__(self, ch: Channel, config: SessionConfig):
        self.ch = ch
        self.cfg = config
        self.params = config.params
        self.rng = config.rng("client")
        self.plan: Plan | None = None
        self.transcript: Transcript | None = None

    def run(self, image) -> PredictionResult:
        return _guard(self.ch, lambda: self._run(image))

    def _run(self, image) -> PredictionResult:
        ch, params, cfg = self.ch, self.params, self.cfg
        clock = {}
        t0 = time.perf_counter()
        keys = keygen(params, self.rng.bytes(32))
        ch.send(FrameType.HELLO, json.dumps(
            {"protocol": PROTOCOL_VERSION, "accuracy": cfg.accuracy, "ot": cfg.ot.mode}).encode())
        doc = json.loads(ch.recv(FrameType.PARAMS))
        if doc.get("digest") != params.digest.hex():
            raise ProtocolError(f"HE parameter mismatch: server p={doc.get('p')}, client p={params.p}")
        ch.send(FrameType.PARAMS, params.digest + keys.public.to_bytes())
        plan = self.plan = Plan.from_meta(json.loads(ch.recv(FrameType.MODEL_META)))
        x = np.asarray(image, dtype=np.int64)
        if x.shape != tuple(plan.input_shape):
            raise ValueError(f"image shape {x.shape} does not match the model input {tuple(plan.input_shape)}")
        clock["handshake"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        ch.phase = "setup"
        circuits = plan_circuits(plan, params.p)
        netlists = [compile_circuit(c) for c in circuits]
        received = [recv_tables(ch, nl, withhold=_final_withheld(c)) for c, nl in zip(circuits, netlists)]
        records = [CircuitRecord.of(c, nl) for c, nl in zip(circuits, netlists)]
        clock["setup"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        ch.phase = "online"
        enc_rng = self.rng.child("enc")
        ot_rng = self.rng.child("ot")
        rt_iter = iter(received)
        share = x % params.p
        ct_up, ct_down = [], []
        for k, step in enumerate(plan.steps):
            if isinstance(step, LinearStep):
                geom = step.geometry()
                ct = encrypt_share(share.reshape(step.in_shape), geom, params, keys.public, enc_rng)
                ch.send(FrameType.CT_UP, _pack_cts(ct.ciphertexts))
                lay = step.layout(params.n)
                k_out = step.out_shape[0]
                cts = _unpack_cts(ch.recv(FrameType.CT_DOWN), params, k_out * lay.ciphertexts)
                per = lay.ciphertexts
                outs = [EncryptedFreqTensor.from_list(lay, cts[j * per:(j + 1) * per]) for j in range(k_out)]
                share = client_conv_output(outs, geom, keys.secret).data
                ct_up.append(len(ct.ciphertexts))
                ct_down.append(len(cts))
                _log(cfg, k, "client", share)
            elif isinstance(step, BlockStep):
                res = evaluator_online(ch, next(rt_iter), {"x_c": bias_share(share.reshape(-1), params.p)}, cfg.ot, ot_rng)
                share = np.asarray(res.outputs["y_c"], dtype=np.int64).reshape(step.out_shape)
                _log(cfg, k, "client", share)
        finals = list(rt_iter)
        sm = plan.softmax_config()
        x_c = bias_share(share.reshape(-1), params.p)
        if sm is None:
            pend = [evaluator_online(ch, finals[0], {"x_c": x_c}, cfg.ot, ot_rng)]
        else:
            r1 = evaluator_online(ch, finals[0], {"x_c": x_c}, cfg.ot, ot_rng)
            a = np.asarray(r1.outputs["a"], dtype=np.int64)
            flag = np.asarray(r1.outputs["flag"], dtype=np.int64)
            r2 = evaluator_online(ch, finals[1], {"e_c": local_exp(a, sm), "f_c": flag}, cfg.ot, ot_rng)
            pend = [r1, r2]
        raw = ch.recv(FrameType.RESULT)
        values, off = {}, 0
        for rt, res in zip(finals, pend):
            if off + 4 > len(raw):
                raise ProtocolError("truncated result")
            (size,) = struct.unpack_from("<I", raw, off)
            dec = parse_decode_map(rt.netlist, rt.withheld, raw[off + 4:off + 4 + size])
            off += 4 + size
            values.update(res.finish(rt, dec))
        if off != len(raw):
            raise ProtocolError("trailing bytes in result")
        ch.send(FrameType.BYE)
        clock["online"] = time.perf_counter() - t0
        t = int(values["t"][0])
        prob = probability(int(values["den"][0]), sm) if sm is not None else None
        self.transcript = Transcript.from_channel(ch, seconds=clock, circuits=records, ct_up=ct_up, ct_down=ct_down)
        return PredictionResult(t, prob)


# ---------------------------------------------------------------------------
# entry points


def predict(image, endpoint=None, config: SessionConfig | None = None, with_transcript: bool = False):
    config = config or SessionConfig()
    host, port = endpoint or config.address
    sock = socket.create_connection((host, int(port)))
    ch = Channel(sock)
    try:
        session = ClientSession(ch, config)
        result = session.run(image)
    finally:
        ch.close()
    return (result, session.transcript) if with_transcript else result


class FalconServer(socketserver.ThreadingTCPServer):
    """Accepts concurrent sessions; each connection gets independent state."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, model: ModelDescriptor, address, config: SessionConfig | None = None,
                 max_sessions: int | None = None):
        self.model = model
        self.config = config or SessionConfig()
        self.max_sessions = max_sessions
        self.sessions = 0
        self.transcripts: list[Transcript] = []
        self.errors: list[BaseException] = []
        self._lock = threading.Lock()
        compile_plan(model, None, self.config.argmax_only, self.config.params.p)
        super().__init__(tuple(address), _Handler)

    def session_finished(self):
        with self._lock:
            self.sessions += 1
            done = self.max_sessions is not None and self.sessions >= self.max_sessions
        if done:
            threading.Thread(target=self.shutdown, daemon=True).start()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        srv: FalconServer = self.server
        ch = Channel(self.request)
        try:
            srv.transcripts.append(ServerSession(srv.model, ch, srv.config).run())
        except (ProtocolError, RemoteError, OSError) as exc:
            srv.errors.append(exc)
        finally:
            ch.close()
            srv.session_finished()


def serve(model: ModelDescriptor, address=None, config: SessionConfig | None = None,
          max_sessions: int | None = None, ready=None) -> FalconServer:
    """Serve sessions until shutdown (or ``max_sessions``); ``ready(server)`` is called once bound."""
    config = config or SessionConfig()
    server = FalconServer(model, address or config.address, config, max_sessions)
    if ready is not None:
        ready(server)
    try:
        server.serve_forever(poll_interval=0.05)
    finally:
        server.server_close()
    return server


def run_inprocess(model: ModelDescriptor, image, config: SessionConfig | None = None,
                  server_config: SessionConfig | None = None, with_server: bool = False):
    """Both parties over a socket pair.  Returns (PredictionResult, Transcript).

    The transcript is the client's channel view merged with the server's HE operation
    counts; ``with_server=True`` also returns the server's own transcript.
    """
    config = config or SessionConfig()
    server_config = server_config or config
    a, b = socket.socketpair()
    sch, cch = Channel(a), Channel(b)
    box = {}
    server = ServerSession(model, sch, server_config)

    def run_server():
        try:
            box["t"] = server.run()
        except BaseException as exc:
            box["exc"] = exc
        finally:
            try:
                a.shutdown(socket.SHUT_WR)
            except OSError:
                pass

    th = threading.Thread(target=run_server, daemon=True)
    th.start()
    client = ClientSession(cch, config)
    try:
        result = client.run(image)
    except BaseException:
        cch.close()  # unblocks a server still writing into a full socket buffer
        th.join()
        sch.close()
        raise
    th.join()
    sch.close()
    cch.close()
    if "exc" in box:
        raise box["exc"]
    t = client.transcript
    t.he_ops = dict(box["t"].he_ops)
    t.events = list(server.events)
    return (result, t, box["t"]) if with_server else (result, t)
