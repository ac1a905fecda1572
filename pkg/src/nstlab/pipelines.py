"""End-to-end style transfer pipelines.

* iterative image-based stylization (optionally with smoothed-activation
  losses),
* single-pass AdaIN encoder/decoder stylization with a content-style
  interpolation knob,
* desk-scale feed-forward trainers for the fast and AdaIN-decoder
  objectives,
* the smoothing A/B harness comparing transforms on a residual network.

Content and style features are computed once per job and treated as
constants of the objective; only the optimized image (or the trainable
weights) ever sits on the tape.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import losses as L
from . import optim as O
from . import tensor as T
from .errors import ContractError, DivergenceError, EngineError, ValidationError
from .fixtures import DEFAULT_PREPROCESS, fixture_weights
from .images import ImageBuffer, PreprocessSpec, deprocess, load_image, preprocess, save_image
from .network import (
    Network,
    NetworkSpec,
    WeightStore,
    build_network,
    forward,
    forward_with_taps,
    get_network,
)
from .tensor import Tensor


@dataclass
class StylizeJob:
    kind: str  # 'image-based' or 'adain'
    content: str
    styles: tuple[str, ...]
    output: str
    network: str = "vgg-tiny"
    weights: str | None = None  # None: seeded fixture weights
    loss: L.LossConfig | None = None
    optimizer: O.OptimizerConfig = field(default_factory=O.OptimizerConfig)
    init: str = "content"  # 'content' or 'noise'
    seed: int = 0
    alpha_interp: float = 1.0
    decoder: str = "vgg-tiny-decoder"
    decoder_weights: str | None = None
    resize: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("image-based", "adain"):
            raise ContractError(f"job kind must be 'image-based' or 'adain', got {self.kind!r}")
        if self.init not in ("content", "noise"):
            raise ContractError(f"init must be 'content' or 'noise', got {self.init!r}")
        if not 0.0 <= self.alpha_interp <= 1.0:
            raise ContractError(f"alpha_interp must lie in [0, 1], got {self.alpha_interp}")
        if not self.styles:
            raise ContractError("at least one style image is required")


@dataclass
class RunReport:
    job: dict
    seed: int
    trace: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    stop_reason: str = "done"
    warnings: list[str] = field(default_factory=list)
    checksums: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def initial(self) -> dict:
        return self.trace[0] if self.trace else dict(self.final)

    def to_json(self, include_timings: bool = False) -> str:
        payload = {
            "job": self.job,
            "seed": self.seed,
            "initial": self.initial,
            "trace": self.trace,
            "final": self.final,
            "stop_reason": self.stop_reason,
            "warnings": self.warnings,
            "checksums": self.checksums,
            "outputs": self.outputs,
        }
        if include_timings:
            payload["timings"] = self.timings
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _sha256(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _load_buffer(source) -> ImageBuffer:
    if isinstance(source, ImageBuffer):
        return source
    return load_image(source)


def _src_label(source) -> str:
    return "<in-memory>" if isinstance(source, ImageBuffer) else str(source)


def _resolve_network(name: str, weights_path: str | None, seed: int = 0):
    net = get_network(name)
    if weights_path is None:
        store = fixture_weights(net, seed=seed)
    else:
        from .network import load_weights

        store = load_weights(weights_path)
    problems = store.validate_for(net)
    if problems:
        raise ValidationError([f"weights for {name!r}: {p}" for p in problems])
    return net, store


def _truncate_to_taps(net: Network, needed: set[str]) -> Network:
    """Drop trailing layers past the deepest needed tap (cheaper forwards)."""
    spec = net.spec
    last = 0
    for i, layer in enumerate(spec.layers):
        sub = {layer.name} | {l.name for l in _flatten(layer)}
        if sub & needed:
            last = i
    trimmed = NetworkSpec(spec.name, spec.layers[: last + 1],
                          taps=tuple(sorted(needed)), role=spec.role,
                          in_channels=spec.in_channels)
    return build_network(trimmed)


def _flatten(layer):
    out = []
    for inner in layer.body:
        out.append(inner)
        out.extend(_flatten(inner))
    return out


def _noise_image(shape_hw: tuple[int, int], seed: int) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(shape_hw[0], shape_hw[1], 3), dtype=np.uint8)
    return ImageBuffer.from_array(arr)


def _default_loss_config(network: str) -> L.LossConfig:
    if network == "resnet-small":
        # per-layer weights of 100 keep the (tiny) smoothed content term from
        # re-balancing the objective under magnitude-shrinking transforms
        return L.LossConfig(
            content_tap="conv3_x_2",
            style_taps=(("conv3_x_2", 100.0), ("conv4_x_2", 100.0)),
            smoothed_taps=frozenset({"conv3_x_2", "conv4_x_2"}),
            gram_normalization="swag",
            content_normalization="half",
        )
    if network == "vgg19-features":
        return L.LossConfig(
            content_tap="conv4_1",
            style_taps=tuple((f"conv{b}_1", 1.0) for b in range(1, 6)),
        )
    return L.LossConfig(
        content_tap="relu2",
        style_taps=(("relu1", 1.0), ("relu2", 1.0), ("relu3", 1.0)),
        gram_normalization="per-element",
        content_normalization="per-element",
    )


def _default_adain_config(network: str) -> L.LossConfig:
    """AdaIN jobs compare against the deepest tap, which feeds the decoder."""
    if network == "vgg-tiny":
        return L.LossConfig(
            content_tap="relu3",
            style_taps=(("relu1", 1.0), ("relu2", 1.0), ("relu3", 1.0)),
            lam=1.0,
        )
    return _default_loss_config(network)


def _job_echo(job: StylizeJob, config: L.LossConfig, preproc: PreprocessSpec,
              weights_meta: dict[str, str]) -> dict:
    echo = {
        "kind": job.kind,
        "content": _src_label(job.content),
        "styles": [_src_label(s) for s in job.styles],
        "output": str(job.output),
        "network": job.network,
        "weights": str(job.weights) if job.weights else "fixture",
        "weights_source": weights_meta.get("source", "unknown"),
        "init": job.init,
        "seed": job.seed,
        "alpha_interp": job.alpha_interp,
        "resize": list(job.resize) if job.resize else None,
        "loss": {
            "alpha": config.alpha,
            "beta": config.beta,
            "lambda": config.lam,
            "content_tap": config.content_tap,
            "style_taps": [[t, w] for t, w in config.style_taps],
            "smoothing": config.smoothing.label(),
            "smoothed_taps": sorted(config.smoothed_taps) if config.smoothed_taps is not None else None,
            "softmax_axis": config.softmax_axis,
            "gram_normalization": config.gram_normalization,
            "content_normalization": config.content_normalization,
            "adain_content_mode": config.adain_content_mode,
            "adain_style_mode": config.adain_style_mode,
            "epsilon": config.epsilon,
        },
        "optimizer": asdict(job.optimizer),
        "preprocess": preproc.to_metadata(),
    }
    if job.kind == "adain":
        echo["decoder"] = job.decoder
        echo["decoder_weights"] = str(job.decoder_weights) if job.decoder_weights else "fixture"
    return echo


# ---------------------------------------------------------------------------
# image-based NST


def stylize_image_based(job: StylizeJob) -> tuple[ImageBuffer, RunReport]:
    """Iteratively optimize pixels to blend content and style features."""
    t_start = time.perf_counter()
    net, store = _resolve_network(job.network, job.weights, seed=job.seed)
    config = job.loss if job.loss is not None else _default_loss_config(job.network)
    preproc = PreprocessSpec.from_metadata(store.metadata)
    if job.resize:
        preproc = replace(preproc, resize=job.resize)

    needed = {config.content_tap} | {t for t, _ in config.style_taps}
    missing = needed - set(net.taps)
    if missing:
        raise ValidationError(
            [f"network {job.network!r} has no tap {t!r}" for t in sorted(missing)]
        )
    run_net = _truncate_to_taps(net, needed)

    content_buf = _load_buffer(job.content)
    content_t = preprocess(content_buf, preproc)
    style_bufs = [_load_buffer(s) for s in job.styles]
    t_load = time.perf_counter()

    wt = store.as_tensors()
    content_bundle = forward_with_taps(run_net, wt, content_t)
    content_target = config.smooth_tap(
        content_bundle[config.content_tap].detach(), config.content_tap
    )
    style_targets = []
    for buf in style_bufs:
        style_preproc = replace(preproc, resize=None)
        st = preprocess(buf, style_preproc)
        bundle = forward_with_taps(run_net, wt, st)
        style_targets.append(L.style_targets(bundle, config))
    n_styles = len(style_targets)

    def objective(img: Tensor):
        bundle = forward_with_taps(run_net, wt, img, record_tape=True)
        fx = config.smooth_tap(bundle[config.content_tap], config.content_tap)
        d = T.sub(fx, content_target)
        lc = T.tsum(T.mul(d, d))
        if config.content_normalization == "half":
            lc = T.scale(lc, 0.5)
        elif config.content_normalization == "per-element":
            lc = T.divc(lc, float(np.prod(fx.shape[1:])))
        ls = None
        for targets in style_targets:
            term = L.style_loss_against(bundle, targets, config)
            ls = term if ls is None else T.add(ls, term)
        ls = T.divc(ls, float(n_styles))
        total = L.combine_losses(lc, ls, config.alpha, config.beta)
        return total, {"content": lc.item(), "style": ls.item()}

    if job.init == "content":
        init = content_t.data
    else:
        noise_buf = _noise_image((content_t.shape[2], content_t.shape[3]), job.seed)
        init = preprocess(noise_buf, replace(preproc, resize=None)).data
    init_checksum = _sha256(init.tobytes())
    t_setup = time.perf_counter()

    result = O.optimize_pixels(init, objective, job.optimizer)
    t_opt = time.perf_counter()

    image = deprocess(Tensor(result.final), preproc)
    save_image(image, job.output)
    with open(job.output, "rb") as fh:
        out_checksum = _sha256(fh.read())

    report = RunReport(
        job=_job_echo(job, config, preproc, store.metadata),
        seed=job.seed,
        trace=result.trace,
        final=result.final_parts,
        stop_reason=result.stop_reason,
        checksums={"init_tensor": init_checksum, "output_image": out_checksum},
        outputs={"image": str(job.output)},
        timings={
            "load": t_load - t_start,
            "setup": t_setup - t_load,
            "optimize": t_opt - t_setup,
            "total": time.perf_counter() - t_start,
        },
    )
    return image, report


# ---------------------------------------------------------------------------
# AdaIN stylization


def stylize_adain(job: StylizeJob) -> tuple[ImageBuffer, RunReport]:
    """Single-pass arbitrary stylization through an encoder/decoder pair."""
    t_start = time.perf_counter()
    net, store = _resolve_network(job.network, job.weights, seed=job.seed)
    dec_net, dec_store = _resolve_network(job.decoder, job.decoder_weights, seed=job.seed)
    config = job.loss if job.loss is not None else _default_adain_config(job.network)
    preproc = PreprocessSpec.from_metadata(store.metadata)
    if job.resize:
        preproc = replace(preproc, resize=job.resize)

    warnings = []
    if job.decoder_weights is None:
        warnings.append("decoder weights are untrained fixture weights")

    content_t = preprocess(_load_buffer(job.content), preproc)
    style_t = preprocess(_load_buffer(job.styles[0]), replace(preproc, resize=None))
    t_load = time.perf_counter()

    wt = store.as_tensors()
    enc_tap = config.content_tap
    if enc_tap not in net.taps:
        raise ValidationError([f"encoder {job.network!r} has no tap {enc_tap!r}"])
    fc_bundle = forward_with_taps(net, wt, content_t)
    fs_bundle = forward_with_taps(net, wt, style_t)
    fc = fc_bundle[enc_tap]
    fs = fs_bundle[enc_tap]
    if fc.shape[1] != dec_net.spec.in_channels:
        raise ValidationError([
            f"encoder tap {enc_tap!r} yields {fc.shape[1]} channels but decoder "
            f"{job.decoder!r} expects {dec_net.spec.in_channels}"
        ])

    t_feats = L.adain(fc, fs, config.epsilon)
    dec_in = L.interpolate_features(fc, fs, job.alpha_interp, config.epsilon)
    out = forward(dec_net, dec_store.as_tensors(), dec_in)
    image = deprocess(out, preproc)
    save_image(image, job.output)
    t_run = time.perf_counter()

    decoded_bundle = forward_with_taps(net, wt, out.detach())
    lc, ls, total = L.adain_loss(decoded_bundle, t_feats.detach(), fs_bundle, config)
    final = {"content": lc.item(), "style": ls.item(), "total": total.item()}

    with open(job.output, "rb") as fh:
        out_checksum = _sha256(fh.read())
    report = RunReport(
        job=_job_echo(job, config, preproc, store.metadata),
        seed=job.seed,
        trace=[],
        final=final,
        stop_reason="single-pass",
        warnings=warnings,
        checksums={"output_image": out_checksum},
        outputs={"image": str(job.output)},
        timings={
            "load": t_load - t_start,
            "run": t_run - t_load,
            "total": time.perf_counter() - t_start,
        },
    )
    return image, report


# ---------------------------------------------------------------------------
# toy feed-forward training


@dataclass
class TrainResult:
    weights: WeightStore
    curve: list[float]
    initial_loss: float
    final_loss: float
    steps: int
    seed: int


def _trainable(store: WeightStore) -> dict[str, Tensor]:
    return store.as_tensors(requires_grad=True)


def _to_store(params: dict[str, Tensor], metadata: dict[str, str]) -> WeightStore:
    out = WeightStore(metadata=dict(metadata))
    for name, tensor in params.items():
        arr = tensor.data
        if name.endswith(".bias"):
            arr = arr.reshape(arr.shape[1])
        out.put(name, arr)
    return out


def _adam_update(params: dict[str, Tensor], grads: dict[Tensor, Tensor],
                 states: dict[str, O.AdamState], cfg: O.OptimizerConfig) -> dict[str, Tensor]:
    new = {}
    for name, tensor in params.items():
        g = grads[tensor]
        updated, states[name] = O.adam_step(states[name], tensor.data, g.data, cfg)
        new[name] = Tensor(updated, requires_grad=True)
    return new


def train_feedforward(kind: str, corpus, style=None, steps: int = 200, seed: int = 0,
                      batch_size: int = 2, learning_rate: float = 5e-3,
                      style_weight: float = 1.0, lam: float = 1.0,
                      style_source: str = "corpus") -> TrainResult:
    """Desk-scale trainer for the fast and AdaIN-decoder objectives.

    ``kind='fast'`` trains the toy transformation network against
    per-element feature/style reconstruction losses through a fixed tiny
    loss network; ``kind='adain-decoder'`` trains the mirror decoder against
    the feature + statistics matching objective. ``style_source='self'``
    pairs every sample with itself (the identity-style autoencoder task).
    """
    if kind not in ("fast", "adain-decoder"):
        raise ContractError(f"trainer kind must be 'fast' or 'adain-decoder', got {kind!r}")
    corpus = [_load_buffer(c) for c in corpus]
    if len(corpus) < 4:
        raise ContractError(f"corpus needs at least 4 images, got {len(corpus)}")
    rng = np.random.default_rng(seed)
    adam_cfg = O.OptimizerConfig(kind="adam", learning_rate=learning_rate)

    loss_net = get_network("vgg-tiny")
    loss_wt = fixture_weights(loss_net, seed=0).as_tensors()
    preproc = DEFAULT_PREPROCESS
    tensors = [preprocess(buf, preproc) for buf in corpus]

    if kind == "fast":
        if style is None:
            raise ContractError("fast training requires a style image")
        net = get_network("fast-toy")
        init_store = fixture_weights(net, seed=seed)
        config = L.LossConfig(
            content_tap="relu2",
            style_taps=(("relu1", 1.0), ("relu2", 1.0), ("relu3", 1.0)),
            gram_normalization="per-element",
            content_normalization="per-element",
        )
        style_t = preprocess(_load_buffer(style), preproc)
        targets = L.style_targets(forward_with_taps(loss_net, loss_wt, style_t), config)
        content_bundles = [forward_with_taps(loss_net, loss_wt, t) for t in tensors]

        def sample_loss(params, idx):
            out = forward(net, params, tensors[idx], record_tape=True)
            bundle = forward_with_taps(loss_net, loss_wt, out, record_tape=True)
            feat = None
            for tap, _ in config.style_taps:
                lf = L.content_loss(bundle[tap], content_bundles[idx][tap].detach(),
                                    normalization="per-element")
                feat = lf if feat is None else T.add(feat, lf)
            ls = L.style_loss_against(bundle, targets, config)
            return T.add(feat, T.scale(ls, style_weight))

    else:
        net = get_network("vgg-tiny-decoder")
        init_store = fixture_weights(net, seed=seed)
        config = L.LossConfig(
            content_tap="relu3",
            style_taps=(("relu1", 1.0), ("relu2", 1.0), ("relu3", 1.0)),
            lam=lam,
        )
        enc_bundles = [forward_with_taps(loss_net, loss_wt, t) for t in tensors]

        def sample_loss(params, idx):
            if style_source == "self":
                sidx = idx
            else:
                sidx = (idx + 1) % len(tensors)
            fc = enc_bundles[idx][config.content_tap].detach()
            fs = enc_bundles[sidx][config.content_tap].detach()
            t_feats = L.adain(fc, fs, config.epsilon).detach()
            out = forward(net, params, t_feats, record_tape=True)
            decoded = forward_with_taps(loss_net, loss_wt, out, record_tape=True)
            _, _, total = L.adain_loss(decoded, t_feats, enc_bundles[sidx], config)
            return total

    params = _trainable(init_store)
    metadata = dict(init_store.metadata)
    metadata["source"] = f"trained:{kind}:seed={seed}:steps={steps}"

    def full_loss(params) -> float:
        acc = 0.0
        for i in range(len(tensors)):
            frozen = {k: v.detach() for k, v in params.items()}
            acc += sample_loss(frozen, i).item()
        return acc / len(tensors)

    initial = full_loss(params)
    if steps == 0:
        return TrainResult(_to_store(params, metadata), [], initial, initial, 0, seed)

    states = {name: O.AdamState.init(t.shape) for name, t in params.items()}
    curve: list[float] = []
    order = list(range(len(tensors)))
    for step in range(steps):
        idxs = rng.choice(order, size=min(batch_size, len(order)), replace=False)
        total = None
        for idx in idxs:
            term = sample_loss(params, int(idx))
            total = term if total is None else T.add(total, term)
        total = T.divc(total, float(len(idxs)))
        value = total.item()
        curve.append(value)
        if value > 1e3 * max(initial, 1e-12):
            raise DivergenceError(
                f"step {step}: loss {value:.3g} exceeds 1000x initial {initial:.3g}"
            )
        grads = T.backprop(total, list(params.values()))
        params = _adam_update(params, grads, states, adam_cfg)

    final = full_loss(params)
    return TrainResult(_to_store(params, metadata), curve, initial, final, steps, seed)


def train_decoder_inverse(corpus, steps: int = 400, seed: int = 0,
                          learning_rate: float = 5e-3, batch_size: int = 2) -> TrainResult:
    """Train the mirror decoder as a pixel-space inverse of the tiny encoder."""
    corpus = [_load_buffer(c) for c in corpus]
    rng = np.random.default_rng(seed)
    adam_cfg = O.OptimizerConfig(kind="adam", learning_rate=learning_rate)
    enc = get_network("vgg-tiny")
    enc_wt = fixture_weights(enc, seed=0).as_tensors()
    dec = get_network("vgg-tiny-decoder")
    init_store = fixture_weights(dec, seed=seed)
    preproc = DEFAULT_PREPROCESS
    tensors = [preprocess(buf, preproc) for buf in corpus]
    feats = [forward_with_taps(enc, enc_wt, t)["relu3"].detach() for t in tensors]

    def sample_loss(params, idx):
        out = forward(dec, params, feats[idx], record_tape=True)
        d = T.sub(out, tensors[idx])
        return T.tmean(T.mul(d, d))

    params = _trainable(init_store)
    metadata = dict(init_store.metadata)
    metadata["source"] = f"trained:inverse-decoder:seed={seed}:steps={steps}"

    def full_loss(params) -> float:
        frozen = {k: v.detach() for k, v in params.items()}
        return sum(sample_loss(frozen, i).item() for i in range(len(tensors))) / len(tensors)

    initial = full_loss(params)
    states = {name: O.AdamState.init(t.shape) for name, t in params.items()}
    curve: list[float] = []
    order = list(range(len(tensors)))
    for step in range(steps):
        idxs = rng.choice(order, size=min(batch_size, len(order)), replace=False)
        total = None
        for idx in idxs:
            term = sample_loss(params, int(idx))
            total = term if total is None else T.add(total, term)
        total = T.divc(total, float(len(idxs)))
        curve.append(total.item())
        grads = T.backprop(total, list(params.values()))
        params = _adam_update(params, grads, states, adam_cfg)
    final = full_loss(params)
    return TrainResult(_to_store(params, metadata), curve, initial, final, steps, seed)


# ---------------------------------------------------------------------------
# smoothing A/B harness


@dataclass
class CompareEntry:
    kind: str
    output: str | None = None
    final: dict = field(default_factory=dict)
    raw_style_metric: float | None = None
    entropy: dict = field(default_factory=dict)
    stop_reason: str = ""
    error: str | None = None


@dataclass
class CompareReport:
    job: dict
    entries: list[CompareEntry]
    init_checksum: str
    raw_entropy: dict

    def to_json(self) -> str:
        payload = {
            "job": self.job,
            "init_checksum": self.init_checksum,
            "raw_entropy": self.raw_entropy,
            "kinds": [asdict(e) for e in self.entries],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def swag_ab_compare(content, style, kinds, output_dir: str,
                    network: str = "resnet-small", weights: str | None = None,
                    optimizer: O.OptimizerConfig | None = None,
                    loss: L.LossConfig | None = None, seed: int = 0,
                    init: str = "content", map_fn=map) -> CompareReport:
    """Run one stylization per smoothing kind from bit-identical starts.

    Returns per-kind final losses, the raw (unsmoothed) style metric of each
    output, and channel-entropy measurements at the smoothed taps, computed
    before and after smoothing on the same content forward pass. ``map_fn``
    may be an executor map; per-kind failures never abort the other kinds,
    and aggregation order always follows ``kinds``.
    """
    import os

    kinds = [L.Smoothing.parse(k) for k in kinds]
    base = loss if loss is not None else replace(
        _default_loss_config(network), alpha=1.0, beta=1e12
    )
    opt = optimizer or O.OptimizerConfig(kind="lbfgs", max_iterations=60)
    os.makedirs(output_dir, exist_ok=True)

    net, store = _resolve_network(network, weights, seed=seed)
    preproc = PreprocessSpec.from_metadata(store.metadata)
    content_buf = _load_buffer(content)
    content_t = preprocess(content_buf, preproc)
    needed = {base.content_tap} | {t for t, _ in base.style_taps}
    run_net = _truncate_to_taps(net, needed)
    wt = store.as_tensors()
    content_bundle = forward_with_taps(run_net, wt, content_t)

    smoothed_taps = sorted(base.smoothed_taps if base.smoothed_taps is not None else needed)
    raw_entropy = {
        tap: L.channel_entropy(content_bundle[tap]) for tap in smoothed_taps
    }

    metric_config = replace(base, smoothing=L.NO_SMOOTHING)
    style_t = preprocess(_load_buffer(style), preproc)
    style_bundle = forward_with_taps(run_net, wt, style_t)
    metric_targets = L.style_targets(style_bundle, metric_config)

    def raw_metric(image_tensor: Tensor) -> float:
        bundle = forward_with_taps(run_net, wt, image_tensor)
        return L.style_loss_against(bundle, metric_targets, metric_config).item()

    args = [
        (content, style, kind, base, opt, network, weights, seed, init,
         os.path.join(output_dir, f"output_{_slug(kind)}.png"))
        for kind in kinds
    ]
    results = list(map_fn(_compare_worker, args))

    entries: list[CompareEntry] = []
    init_checksum = None
    for kind, result in zip(kinds, results):
        entry = CompareEntry(kind=kind.label())
        if "error" in result:
            entry.error = result["error"]
            entries.append(entry)
            continue
        entry.output = result["output"]
        entry.final = result["final"]
        entry.stop_reason = result["stop_reason"]
        if init_checksum is None:
            init_checksum = result["init_checksum"]
        elif init_checksum != result["init_checksum"]:
            raise ContractError("smoothing kinds started from different images")
        final_t = preprocess(load_image(result["output"]), preproc)
        entry.raw_style_metric = raw_metric(final_t)
        entry.entropy = {
            tap: {
                "raw": raw_entropy[tap],
                "smoothed": L.channel_entropy(
                    L.smooth(content_bundle[tap].detach(), kind, base.softmax_axis)
                ),
            }
            for tap in smoothed_taps
        }
        entries.append(entry)

    job_echo = {
        "network": network,
        "weights": str(weights) if weights else "fixture",
        "kinds": [k.label() for k in kinds],
        "seed": seed,
        "init": init,
        "optimizer": asdict(opt),
        "loss": {
            "alpha": base.alpha,
            "beta": base.beta,
            "content_tap": base.content_tap,
            "style_taps": [[t, w] for t, w in base.style_taps],
            "smoothed_taps": smoothed_taps,
            "gram_normalization": base.gram_normalization,
            "content_normalization": base.content_normalization,
        },
    }
    return CompareReport(job=job_echo, entries=entries,
                         init_checksum=init_checksum or "",
                         raw_entropy=raw_entropy)


def _slug(kind: L.Smoothing) -> str:
    return kind.label().replace(":", "_").replace(".", "p")


def _compare_worker(args) -> dict:
    (content, style, kind, base, opt, network, weights, seed, init, output) = args
    try:
        config = replace(base, smoothing=kind)
        job = StylizeJob(kind="image-based", content=content, styles=(style,),
                         output=output, network=network, weights=weights,
                         loss=config, optimizer=opt, init=init, seed=seed)
        _, report = stylize_image_based(job)
        return {
            "output": output,
            "final": report.final,
            "stop_reason": report.stop_reason,
            "init_checksum": report.checksums["init_tensor"],
        }
    except EngineError as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}
