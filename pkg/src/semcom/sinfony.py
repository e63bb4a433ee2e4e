"""The end-to-end distributed semantic transceiver.

Four agents each see one image quadrant; per-agent feature extractors and
transmitter heads produce power-constrained channel symbols, a shared
receiver stack and a softmax classifier recover the class posterior from the
noisy observations. Training minimizes the batch-mean negative log posterior
of the true class, with gradients flowing through the channel by replaying
the exact noise draw.

Variants:
  central       one network on the stitched full image, no channel
  perfect-comm  distributed, power-normalized features, ideal links
  train-noise   perfect-comm topology trained through the AWGN channel
  txrx          full transmitter/receiver heads around the channel
  eval-noise    (runner-level) perfect-comm weights evaluated under noise
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import nn
from .channel import (RateInfo, normalized_snr_db, sample_training_snr,
                      snr_db_to_sigma)
from .errors import ConfigError, NonFiniteError
from .records import MetricsRecord, binomial_stderr
from .semantics import split_quadrants

TRAINED_VARIANTS = ("central", "perfect-comm", "train-noise", "txrx")
ALL_VARIANTS = TRAINED_VARIANTS + ("eval-noise",)


@dataclass(frozen=True)
class SinfonyConfig:
    n_classes: int = 10
    agents: int = 4
    quadrant_hw: tuple = (14, 14)
    in_channels: int = 1
    stem_channels: int = 14
    stage_channels: tuple = (14, 28, 56)
    units_per_stage: int = 2
    n_tx: int = 56
    n_rx: int | None = None  # defaults to n_feat
    rx_layers: int = 1
    normalize_mode: str = "per-vector"
    normalize_eps: float = 0.0

    @property
    def n_feat(self):
        return self.stage_channels[-1]

    @property
    def rx_width(self):
        return self.n_feat if self.n_rx is None else self.n_rx

    def validate(self):
        if self.n_tx < 1 or self.n_tx > self.n_feat:
            raise ConfigError(f"n_tx must be in [1, {self.n_feat}], got {self.n_tx}")
        if self.stem_channels != self.stage_channels[0]:
            raise ConfigError("stem channel count must match the first stage")
        if self.units_per_stage < 1:
            raise ConfigError("units_per_stage must be >= 1")
        return self


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.1
    lr_milestones: tuple = (3, 6)
    lr_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    train_subset: int | None = None
    probe_subset: int | None = 2000
    dtype: str = "float32"
    threads: int = 1
    check_finite: bool = True


def encoder_specs(cfg, central=False):
    """Feature extractor: stem conv, three residual stages, BN-ReLU-pool."""
    specs = [nn.conv2d(cfg.stem_channels)]
    for stage, ch in enumerate(cfg.stage_channels):
        for unit in range(cfg.units_per_stage):
            stride = 2 if (stage > 0 and unit == 0) else 1
            specs.append(nn.residual_unit(ch, stride=stride))
    specs += [nn.batchnorm(), nn.relu(), nn.global_avg_pool2d()]
    return specs


def tx_specs(cfg):
    """Transmitter head: ReLU layer and linear layer of width n_tx, then the
    power constraint."""
    return [nn.dense(cfg.n_tx), nn.relu(), nn.dense(cfg.n_tx),
            nn.normalize_power(cfg.normalize_mode, cfg.normalize_eps)]


def normalize_only_specs(cfg):
    return [nn.normalize_power(cfg.normalize_mode, cfg.normalize_eps)]


def rx_specs(cfg):
    specs = []
    for _ in range(cfg.rx_layers):
        specs += [nn.dense(cfg.rx_width), nn.relu()]
    return specs


def classifier_specs(cfg):
    return [nn.dense(cfg.n_classes), nn.softmax()]


class SinfonyModel:
    """Holds the per-agent encoder chains plus the shared decoder."""

    def __init__(self, variant, config, encoders, tx, rx, classifier, seed):
        self.variant = variant
        self.config = config
        self.encoders = encoders
        self.tx = tx
        self.rx = rx
        self.classifier = classifier
        self.seed = seed
        self._pool = None

    # -- construction -------------------------------------------------

    @staticmethod
    def build(variant, config, seed, dtype=np.float32, check_finite=True):
        config.validate()
        if variant not in TRAINED_VARIANTS:
            raise ConfigError(f"unknown trainable variant {variant!r}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        kw = dict(dtype=dtype, check_finite=check_finite, rng=rng)
        h, w = config.quadrant_hw
        if variant == "central":
            enc = nn.build_network(encoder_specs(config, central=True),
                                   (2 * h, 2 * w, config.in_channels),
                                   name="encoder0", **kw)
            cls = nn.build_network(classifier_specs(config), (config.n_feat,),
                                   name="classifier", **kw)
            return SinfonyModel(variant, config, [enc], None, None, cls, seed)
        encoders = [nn.build_network(encoder_specs(config),
                                     (h, w, config.in_channels),
                                     name=f"encoder{i}", **kw)
                    for i in range(config.agents)]
        if variant == "txrx":
            tx = [nn.build_network(tx_specs(config), (config.n_feat,),
                                   name=f"tx{i}", **kw)
                  for i in range(config.agents)]
            rx = nn.build_network(rx_specs(config), (config.n_tx,),
                                  name="rx", **kw)
            cls_in = config.rx_width
        else:  # perfect-comm / train-noise: normalization only, no Rx net
            tx = [nn.build_network(normalize_only_specs(config),
                                   (config.n_feat,), name=f"tx{i}", **kw)
                  for i in range(config.agents)]
            rx = None
            cls_in = config.n_feat
        cls = nn.build_network(classifier_specs(config), (cls_in,),
                               name="classifier", **kw)
        return SinfonyModel(variant, config, encoders, tx, rx, cls, seed)

    # -- bookkeeping ---------------------------------------------------

    @property
    def channel_in_training(self):
        return self.variant in ("train-noise", "txrx")

    @property
    def n_tx_effective(self):
        if self.variant == "central":
            return self.config.n_feat
        return self.config.n_tx if self.variant == "txrx" else self.config.n_feat

    @property
    def rate(self):
        return RateInfo(self.config.n_feat, self.n_tx_effective)

    def networks(self):
        nets = {net.name: net for net in self.encoders}
        if self.tx is not None:
            for net in self.tx:
                nets[net.name] = net
        if self.rx is not None:
            nets[self.rx.name] = self.rx
        nets[self.classifier.name] = self.classifier
        return nets

    def params(self):
        return [p for net in self.networks().values() for p in net.params()]

    def zero_grad(self):
        for net in self.networks().values():
            net.zero_grad()

    def decoder_param_count(self):
        nets = [self.classifier] + ([self.rx] if self.rx is not None else [])
        return sum(p.value.size for net in nets for p in net.params())

    def encoder_param_count(self):
        nets = list(self.encoders) + (self.tx or [])
        return sum(p.value.size for net in nets for p in net.params())

    def _ensure_pool(self, threads):
        if threads > 1 and self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=threads)
        return self._pool if threads > 1 else None

    # -- forward pieces ------------------------------------------------

    def transmit(self, agent_inputs, train=False, threads=1):
        """Per-agent encoder + transmitter: (B, A, h, w, c) -> (B, A, n)."""
        b = agent_inputs.shape[0]
        n = self.n_tx_effective
        out = np.empty((b, self.config.agents, n),
                       dtype=self.encoders[0].dtype)

        def one(i):
            u = self.encoders[i].forward(agent_inputs[:, i], train)
            out[:, i] = self.tx[i].forward(u, train)

        pool = self._ensure_pool(threads)
        if pool is None:
            for i in range(self.config.agents):
                one(i)
        else:
            list(pool.map(one, range(self.config.agents)))
        return out

    def decode(self, received, train=False):
        """Shared receiver + classifier: (B, A, n) -> class probabilities."""
        b, a, n = received.shape
        if self.rx is not None:
            folded = np.ascontiguousarray(received.reshape(b * a, n))
            streams = self.rx.forward(folded, train)
            pooled = streams.reshape(b, a, -1).mean(axis=1)
        else:
            pooled = received.mean(axis=1)
        return self.classifier.forward(pooled, train)

    def _decode_backward(self, dlogits, b):
        a = self.config.agents
        g_pooled = self.classifier.backward_from_logits(dlogits)
        if self.rx is not None:
            g_streams = np.repeat(g_pooled / a, a, axis=0).astype(g_pooled.dtype)
            g_folded = self.rx.backward(g_streams)
            return g_folded.reshape(b, a, -1)
        width = g_pooled.shape[1]
        return np.broadcast_to(g_pooled[:, None, :] / a,
                               (b, a, width)).astype(g_pooled.dtype)

    def _transmit_backward(self, g_x, threads=1):
        def one(i):
            g_u = self.tx[i].backward(np.ascontiguousarray(g_x[:, i]))
            self.encoders[i].backward(g_u)

        pool = self._ensure_pool(threads)
        if pool is None:
            for i in range(self.config.agents):
                one(i)
        else:
            list(pool.map(one, range(self.config.agents)))

    # -- loss ----------------------------------------------------------

    def training_loss(self, inputs, labels, snr_db=None, rng=None, noise=None,
                      compute_grads=True, threads=1):
        """Batch-mean negative log posterior of the true class.

        For channel variants the noise draw is returned so the same
        randomness can be replayed; pass `noise` to replay it. Gradients for
        all parameters are populated when `compute_grads` is set.
        """
        b = inputs.shape[0]
        if self.variant == "central":
            feats = self.encoders[0].forward(inputs, train=True)
            probs = self.classifier.forward(feats, train=True)
        else:
            x = self.transmit(inputs, train=True, threads=threads)
            y = x
            if snr_db is not None:
                sigma = snr_db_to_sigma(snr_db)
                if noise is None:
                    noise = rng.standard_normal(x.shape)
                if sigma:
                    y = x + np.asarray(sigma * noise, dtype=x.dtype)
            probs = self.decode(y, train=True)
        log_p = self.classifier.log_probs()
        picked = log_p[np.arange(b), labels]
        if not np.all(np.isfinite(picked)):
            bad = int(np.flatnonzero(~np.isfinite(picked))[0])
            raise NonFiniteError(f"non-finite loss at sample index {bad}")
        loss = float(-picked.mean())
        if compute_grads:
            dlogits = probs.copy()
            dlogits[np.arange(b), labels] -= 1.0
            dlogits /= b
            if self.variant == "central":
                g = self.classifier.backward_from_logits(dlogits)
                self.encoders[0].backward(g)
            else:
                g_x = self._decode_backward(dlogits, b)
                self._transmit_backward(g_x, threads=threads)
        else:
            for net in self.networks().values():
                net._tape_ready = False
        return loss, noise

    # -- persistence ---------------------------------------------------

    def save(self, path, optimizer=None, rng=None, extra_meta=None):
        meta = {"variant": self.variant, "seed": self.seed,
                "config": _config_to_dict(self.config)}
        meta.update(extra_meta or {})
        nn.save_checkpoint(path, self.networks(), optimizer=optimizer,
                           rng=rng, meta=meta)

    @staticmethod
    def load(path, check_finite=True):
        nets, doc, opt_arrays = nn.load_checkpoint(path)
        meta = doc["meta"]
        config = _config_from_dict(meta["config"])
        for net in nets.values():
            net.check_finite = check_finite
        encoders = [nets[f"encoder{i}"] for i in range(len(
            [k for k in nets if k.startswith("encoder")]))]
        tx = [nets[f"tx{i}"] for i in range(len(
            [k for k in nets if k.startswith("tx")]))] or None
        model = SinfonyModel(meta["variant"], config, encoders, tx,
                             nets.get("rx"), nets["classifier"], meta["seed"])
        return model, doc, opt_arrays


def _config_to_dict(cfg):
    d = dict(cfg.__dict__)
    d["stage_channels"] = list(cfg.stage_channels)
    d["quadrant_hw"] = list(cfg.quadrant_hw)
    return d


def _config_from_dict(d):
    d = dict(d)
    d["stage_channels"] = tuple(d["stage_channels"])
    d["quadrant_hw"] = tuple(d["quadrant_hw"])
    return SinfonyConfig(**d)


# -- training ------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_error: float


def model_inputs(model, dataset, dtype=np.float32):
    """Dataset images arranged for the model: quadrants or stitched images."""
    images = np.asarray(dataset.images, dtype=dtype)
    if model.variant == "central":
        return images
    return np.ascontiguousarray(split_quadrants(images))


def train_model(model, train_set, val_set, train_cfg, channel_cfg, seed,
                checkpoint_path=None, log=None):
    """SGD-with-momentum training loop with the schedule and probes.

    Returns the per-epoch records. Checkpoints (when a path is given) are
    written at every learning-rate milestone and at the end.
    """
    channel_cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EA1]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC4A2]))
    train_set = train_set.subset(train_cfg.train_subset)
    inputs = model_inputs(model, train_set)
    labels = train_set.labels
    probe_set = val_set.subset(train_cfg.probe_subset)
    probe_inputs = model_inputs(model, probe_set)

    opt = nn.SgdMomentum(model.params(), lr=train_cfg.lr,
                         momentum=train_cfg.momentum,
                         weight_decay=train_cfg.weight_decay)
    sampler_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0DDE]))
    n = len(train_set)
    records = []
    probe_snr = None
    if model.channel_in_training:
        if channel_cfg.snr_mode == "fixed":
            probe_snr = channel_cfg.snr_db
        else:
            probe_snr = 0.5 * (channel_cfg.snr_db_min + channel_cfg.snr_db_max)
    for epoch in range(train_cfg.epochs):
        if epoch in train_cfg.lr_milestones:
            opt.lr *= train_cfg.lr_factor
        order = sampler_rng.permutation(n)
        total_loss = 0.0
        batches = 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            snr = None
            if model.channel_in_training:
                snr = sample_training_snr(channel_cfg, noise_rng)
            model.zero_grad()
            loss, _ = model.training_loss(inputs[idx], labels[idx], snr,
                                          rng=noise_rng,
                                          threads=train_cfg.threads)
            opt.step()
            total_loss += loss
            batches += 1
        val_error = _probe_error(model, probe_inputs, probe_set.labels,
                                 probe_snr, np.random.default_rng(
                                     np.random.SeedSequence([seed, 0xE7A1, epoch])))
        rec = EpochRecord(epoch, opt.lr, total_loss / batches, val_error)
        records.append(rec)
        if log is not None:
            log(f"epoch {epoch:3d} lr {opt.lr:.4g} loss {rec.train_loss:.4f} "
                f"val_err {val_error:.4f}")
        if checkpoint_path and (epoch + 1) in train_cfg.lr_milestones:
            model.save(checkpoint_path, optimizer=opt, rng=rng,
                       extra_meta={"epoch": epoch})
    if checkpoint_path:
        model.save(checkpoint_path, optimizer=opt, rng=rng,
                   extra_meta={"epoch": train_cfg.epochs - 1})
    return records


def _probe_error(model, inputs, labels, snr_db, rng):
    probs = predict_probs(model, inputs, snr_db, rng)
    pred = probs.argmax(axis=1)
    return float(np.mean(pred != labels))


def predict_probs(model, inputs, snr_db=None, rng=None, chunk=2048):
    """Eval-mode class posteriors, optionally through the noisy channel."""
    outs = []
    for start in range(0, inputs.shape[0], chunk):
        batch = inputs[start:start + chunk]
        if model.variant == "central":
            feats = model.encoders[0].forward(batch, train=False)
            outs.append(model.classifier.forward(feats, train=False))
            continue
        x = model.transmit(batch, train=False)
        if snr_db is not None and snr_db != math.inf:
            sigma = snr_db_to_sigma(snr_db)
            x = x + np.asarray(sigma * rng.standard_normal(x.shape),
                               dtype=x.dtype)
        outs.append(model.decode(x, train=False))
    return np.concatenate(outs, axis=0)


# -- evaluation ----------------------------------------------------------


def evaluate(model, dataset, snr_grid, mc_rounds, seed, variant_label=None,
             chunk=2048):
    """Error-rate sweep over an SNR grid with mc_rounds noise redraws.

    Encoder outputs are deterministic, so they are computed once and only
    the channel and decoder are repeated per draw. A grid value of inf is
    the exact noiseless path.
    """
    label = variant_label or model.variant
    rate = model.rate
    inputs = model_inputs(model, dataset)
    labels = dataset.labels
    n = len(dataset)
    records = []
    if model.variant == "central":
        probs = predict_probs(model, inputs, chunk=chunk)
        err = float(np.mean(probs.argmax(axis=1) != labels))
        nll = _mean_nll(probs, labels)
        return [MetricsRecord(label, model.n_tx_effective, model.config.n_feat,
                              rate.rho, math.inf, math.inf, err,
                              binomial_stderr(err, n), nll, n, seed)]
    x = _transmit_all(model, inputs, chunk)
    for snr_db in snr_grid:
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, 0xE0A1, _snr_key(snr_db)]))
        sigma = snr_db_to_sigma(snr_db) if snr_db != math.inf else 0.0
        rounds = 1 if sigma == 0.0 else mc_rounds
        errors = 0
        nll_total = 0.0
        for _ in range(rounds):
            y = x if sigma == 0.0 else x + np.asarray(
                sigma * rng.standard_normal(x.shape), dtype=x.dtype)
            probs = _decode_all(model, y, chunk)
            pred = probs.argmax(axis=1)
            errors += int(np.sum(pred != labels))
            nll_total += _mean_nll(probs, labels) * n
        samples = n * rounds
        err = errors / samples
        records.append(MetricsRecord(
            label, model.n_tx_effective, model.config.n_feat, rate.rho,
            float(snr_db), normalized_snr_db(snr_db, rate), err,
            binomial_stderr(err, samples), nll_total / samples, samples, seed))
    return records


def _snr_key(snr_db):
    if snr_db == math.inf:
        return 10 ** 6
    return int(round(float(snr_db) * 1000)) % (2 ** 31)


def _transmit_all(model, inputs, chunk):
    outs = [model.transmit(inputs[s:s + chunk], train=False)
            for s in range(0, inputs.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def _decode_all(model, y, chunk):
    outs = [model.decode(y[s:s + chunk], train=False)
            for s in range(0, y.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def _mean_nll(probs, labels):
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())
