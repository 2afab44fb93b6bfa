"""Latent domain translation between image and mesh trajectory codes.

Two dense generators map between the code spaces, two discriminators judge
realism, a cycle loss enforces reversibility, and a frozen pretrained EF
regressor ties generated mesh codes to the ejection fraction of the source;
generators and discriminators optimize a weighted joint objective with
early stopping on validation EF loss.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import autodiff as ad
from . import layers
from .autodiff import TrainingDivergedError, Var
from .checkpoint import load_checkpoint, save_checkpoint
from .geometry.mesh import MeshVideo
from .optim import AdamState, adam_step
from .trajectory import TrajectoryCode
from .validation import as_float_array, check_fitted


def _mlp(leaves, prefix: str, x: Var, n_layers: int) -> Var:
    h = x
    for i in range(1, n_layers):
        h = ad.tanh(layers.dense(leaves, f"{prefix}.fc{i}", h))
    return layers.dense(leaves, f"{prefix}.fc{n_layers}", h)


def _mlp_params(rng, prefix: str, dims: list[int]) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for i in range(len(dims) - 1):
        params.update(layers.dense_params(rng, f"{prefix}.fc{i + 1}", dims[i], dims[i + 1]))
    return params


class EjectionFractionRegressor(BaseEstimator, RegressorMixin):
    """Dense regressor from flattened mesh trajectory codes to EF in (0, 1)."""

    def __init__(
        self,
        hidden: tuple[int, int] = (32, 16),
        epochs: int = 300,
        batch_size: int = 16,
        lr: float = 1e-3,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _n_layers(self) -> int:
        return len(self.hidden) + 1

    def forward_graph(self, leaves, x: Var) -> Var:
        """EF prediction column (B, 1); usable inside larger graphs."""
        return ad.sigmoid(_mlp(leaves, "ef", x, self._n_layers()))

    def fit(self, X, y) -> "EjectionFractionRegressor":
        x = as_float_array(X, "codes", ndim=2)
        targets = as_float_array(y, "ef labels", ndim=1)
        if len(x) != len(targets):
            raise ValueError("codes and labels disagree on sample count")
        if ((targets < 0) | (targets > 1)).any():
            raise ValueError("EF labels must lie in [0, 1]")
        rng = np.random.default_rng(self.seed)
        dims = [x.shape[1], *self.hidden, 1]
        params = _mlp_params(rng, "ef", dims)
        state = AdamState.initial(params)
        history: list[float] = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(x))
            losses = []
            for start in range(0, len(x), self.batch_size):
                sel = order[start : start + self.batch_size]
                leaves = ad.leaf_vars(params)
                pred = self.forward_graph(leaves, Var(x[sel]))
                loss = ad.l1(pred, targets[sel][:, None])
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergedError(epoch)
                loss.backward()
                params, state = adam_step(params, ad.grads_of(leaves), state, lr=self.lr)
                losses.append(value)
            history.append(float(np.mean(losses)))
        self.params_ = params
        self.history_ = history
        return self

    def predict(self, X) -> np.ndarray:
        check_fitted(self, "params_")
        x = as_float_array(X, "codes", ndim=2)
        leaves = ad.leaf_vars(self.params_)
        return self.forward_graph(leaves, Var(x)).data[:, 0]

    def save(self, path) -> None:
        check_fitted(self, "params_")
        meta = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()}
        meta["class"] = type(self).__name__
        save_checkpoint(path, self.params_, meta)

    @classmethod
    def load(cls, path) -> "EjectionFractionRegressor":
        tensors, meta = load_checkpoint(path)
        kwargs = {k: v for k, v in meta.items() if k != "class"}
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        est = cls(**kwargs)
        est.params_ = tensors
        est.history_ = []
        return est


# -- loss pieces ---------------------------------------------------------------


def adversarial_losses(
    params: dict[str, np.ndarray],
    phi_image: np.ndarray,
    phi_mesh: np.ndarray,
    n_layers: int = 3,
) -> dict[str, float]:
    """Generator and discriminator BCE terms on one batch pair.

    Discriminators label real codes 1 and generated codes 0; generator terms
    are non-saturating (generated labeled 1).  Expectations are batch means.
    """
    leaves = ad.leaf_vars(params)
    pi, pm = Var(phi_image), Var(phi_mesh)
    fake_mesh = _mlp(leaves, "g_mesh", pi, n_layers)
    fake_image = _mlp(leaves, "g_image", pm, n_layers)
    d_mesh = (
        ad.bce_with_logits(_mlp(leaves, "d_mesh", pm, n_layers), 1.0)
        + ad.bce_with_logits(_mlp(leaves, "d_mesh", fake_mesh, n_layers), 0.0)
    )
    d_image = (
        ad.bce_with_logits(_mlp(leaves, "d_image", pi, n_layers), 1.0)
        + ad.bce_with_logits(_mlp(leaves, "d_image", fake_image, n_layers), 0.0)
    )
    g_mesh = ad.bce_with_logits(_mlp(leaves, "d_mesh", fake_mesh, n_layers), 1.0)
    g_image = ad.bce_with_logits(_mlp(leaves, "d_image", fake_image, n_layers), 1.0)
    return {
        "generator_mesh": g_mesh.item(),
        "generator_image": g_image.item(),
        "discriminator_mesh": d_mesh.item(),
        "discriminator_image": d_image.item(),
    }


def cycle_loss(params: dict[str, np.ndarray], phi_image: np.ndarray, phi_mesh: np.ndarray, n_layers: int = 3) -> float:
    """Mean L1 of both round trips through the generators."""
    leaves = ad.leaf_vars(params)
    pi, pm = Var(phi_image), Var(phi_mesh)
    back_i = _mlp(leaves, "g_image", _mlp(leaves, "g_mesh", pi, n_layers), n_layers)
    back_m = _mlp(leaves, "g_mesh", _mlp(leaves, "g_image", pm, n_layers), n_layers)
    return (ad.l1(back_i, pi) + ad.l1(back_m, pm)).item()


def ef_loss(
    params: dict[str, np.ndarray],
    ef_model: EjectionFractionRegressor,
    phi_image: np.ndarray,
    ef_image: np.ndarray,
    phi_mesh: np.ndarray,
    ef_mesh: np.ndarray,
    n_layers: int = 3,
) -> float:
    """Mean L1 between frozen-EF predictions on generated codes and labels."""
    leaves = ad.leaf_vars(params)
    ef_leaves = ad.leaf_vars(ef_model.params_)
    pi, pm = Var(phi_image), Var(phi_mesh)
    term_i = ad.l1(
        ef_model.forward_graph(ef_leaves, _mlp(leaves, "g_mesh", pi, n_layers)),
        np.asarray(ef_image)[:, None],
    )
    round_trip = _mlp(leaves, "g_mesh", _mlp(leaves, "g_image", pm, n_layers), n_layers)
    term_m = ad.l1(
        ef_model.forward_graph(ef_leaves, round_trip), np.asarray(ef_mesh)[:, None]
    )
    return (term_i + term_m).item()


# -- the mapper ------------------------------------------------------------------


class LatentCycleMapper(BaseEstimator):
    """Cycle-consistent adversarial mapping between the two code spaces.

    ``fit`` alternates discriminator and generator Adam updates per batch;
    the generator objective is ``beta1*L_adv_mesh + beta2*L_adv_image +
    beta3*L_cycle + beta4*L_ef``.  Validation EF loss is logged every epoch
    (entry 0 is the untrained model) and training stops early once it has
    not improved for ``patience`` epochs; the returned parameters are from
    the best validation epoch.
    """

    def __init__(
        self,
        hidden: int = 64,
        n_layers: int = 3,
        beta1: float = 1.0,
        beta2: float = 1.0,
        beta3: float = 10.0,
        beta4: float = 10.0,
        lr_generator: float = 1e-3,
        lr_discriminator: float = 1e-3,
        batch_size: int = 16,
        max_epochs: int = 200,
        patience: int = 10,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.n_layers = n_layers
        self.beta1 = beta1
        self.beta2 = beta2
        self.beta3 = beta3
        self.beta4 = beta4
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed

    def _init_params(self, dim: int) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        if any(b < 0 for b in (self.beta1, self.beta2, self.beta3, self.beta4)):
            raise ValueError("loss weights must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        rng = np.random.default_rng(self.seed)
        inner = [dim] + [self.hidden] * (self.n_layers - 1)
        g_params = {
            **_mlp_params(rng, "g_mesh", inner + [dim]),
            **_mlp_params(rng, "g_image", inner + [dim]),
        }
        d_params = {
            **_mlp_params(rng, "d_mesh", inner + [1]),
            **_mlp_params(rng, "d_image", inner + [1]),
        }
        return g_params, d_params

    def _val_ef_loss(
        self,
        g_params: dict[str, np.ndarray],
        ef_model: EjectionFractionRegressor,
        val: dict[str, np.ndarray],
    ) -> float:
        return ef_loss(
            g_params,
            ef_model,
            val["phi_image"],
            val["ef_image"],
            val["phi_mesh"],
            val["ef_mesh"],
            self.n_layers,
        )

    def fit(
        self,
        phi_image: np.ndarray,
        phi_mesh: np.ndarray,
        ef_image: np.ndarray,
        ef_mesh: np.ndarray,
        ef_model: EjectionFractionRegressor,
        validation: dict[str, np.ndarray],
    ) -> "LatentCycleMapper":
        """Train generators and discriminators on unpaired code pools.

        ``validation`` holds paired ``phi_image``/``ef_image`` and
        ``phi_mesh``/``ef_mesh`` arrays used only for the early-stop metric.
        """
        pi = as_float_array(phi_image, "phi_image", ndim=2)
        pm = as_float_array(phi_mesh, "phi_mesh", ndim=2)
        efi = as_float_array(ef_image, "ef_image", ndim=1)
        efm = as_float_array(ef_mesh, "ef_mesh", ndim=1)
        if pi.shape[1] != pm.shape[1]:
            raise ValueError("image and mesh code dimensions differ")
        check_fitted(ef_model, "params_")
        dim = pi.shape[1]
        g_params, d_params = self._init_params(dim)
        g_state = AdamState.initial(g_params)
        d_state = AdamState.initial(d_params)
        ef_before = {k: v.copy() for k, v in ef_model.params_.items()}
        rng = np.random.default_rng(self.seed + 1)

        def frozen_ef(leaves, x: Var) -> Var:
            ef_leaves = ad.leaf_vars(ef_model.params_)
            return ef_model.forward_graph(ef_leaves, x)

        history: list[dict[str, float]] = []
        val_history = [self._val_ef_loss(g_params, ef_model, validation)]
        best_val = val_history[0]
        best_epoch = 0
        best_g = {k: v.copy() for k, v in g_params.items()}
        best_d = {k: v.copy() for k, v in d_params.items()}
        since_best = 0

        for epoch in range(1, self.max_epochs + 1):
            order_i = rng.permutation(len(pi))
            order_m = rng.permutation(len(pm))
            n_batches = max(1, min(len(pi), len(pm)) // self.batch_size)
            sums = {"d": 0.0, "g_adv_mesh": 0.0, "g_adv_image": 0.0, "cycle": 0.0, "ef": 0.0}
            for bi in range(n_batches):
                sel_i = order_i[bi * self.batch_size : (bi + 1) * self.batch_size]
                sel_m = order_m[bi * self.batch_size : (bi + 1) * self.batch_size]
                bi_i, bi_m = pi[sel_i], pm[sel_m]

                # Discriminator update (generators held fixed).
                leaves = ad.leaf_vars({**d_params, **g_params})
                fake_mesh = _mlp(leaves, "g_mesh", Var(bi_i), self.n_layers)
                fake_image = _mlp(leaves, "g_image", Var(bi_m), self.n_layers)
                d_loss = (
                    ad.bce_with_logits(_mlp(leaves, "d_mesh", Var(bi_m), self.n_layers), 1.0)
                    + ad.bce_with_logits(_mlp(leaves, "d_mesh", fake_mesh, self.n_layers), 0.0)
                    + ad.bce_with_logits(_mlp(leaves, "d_image", Var(bi_i), self.n_layers), 1.0)
                    + ad.bce_with_logits(_mlp(leaves, "d_image", fake_image, self.n_layers), 0.0)
                )
                d_value = d_loss.item()
                if not np.isfinite(d_value):
                    raise TrainingDivergedError(epoch, "discriminator loss")
                d_loss.backward()
                d_grads = {k: g for k, g in ad.grads_of(leaves).items() if k in d_params}
                d_params, d_state = adam_step(
                    d_params, d_grads, d_state, lr=self.lr_discriminator
                )

                # Generator update (discriminators held fixed).
                leaves = ad.leaf_vars({**d_params, **g_params})
                vi, vm = Var(bi_i), Var(bi_m)
                fake_mesh = _mlp(leaves, "g_mesh", vi, self.n_layers)
                fake_image = _mlp(leaves, "g_image", vm, self.n_layers)
                back_i = _mlp(leaves, "g_image", fake_mesh, self.n_layers)
                back_m = _mlp(leaves, "g_mesh", fake_image, self.n_layers)
                adv_mesh = ad.bce_with_logits(
                    _mlp(leaves, "d_mesh", fake_mesh, self.n_layers), 1.0
                )
                adv_image = ad.bce_with_logits(
                    _mlp(leaves, "d_image", fake_image, self.n_layers), 1.0
                )
                cyc = ad.l1(back_i, vi) + ad.l1(back_m, vm)
                ef_term = ad.l1(frozen_ef(leaves, fake_mesh), efi[sel_i][:, None]) + ad.l1(
                    frozen_ef(leaves, back_m), efm[sel_m][:, None]
                )
                g_loss = (
                    self.beta1 * adv_mesh
                    + self.beta2 * adv_image
                    + self.beta3 * cyc
                    + self.beta4 * ef_term
                )
                g_value = g_loss.item()
                if not np.isfinite(g_value):
                    raise TrainingDivergedError(epoch, "generator objective")
                g_loss.backward()
                g_grads = {k: g for k, g in ad.grads_of(leaves).items() if k in g_params}
                g_params, g_state = adam_step(
                    g_params, g_grads, g_state, lr=self.lr_generator
                )

                sums["d"] += d_value
                sums["g_adv_mesh"] += adv_mesh.item()
                sums["g_adv_image"] += adv_image.item()
                sums["cycle"] += cyc.item()
                sums["ef"] += ef_term.item()

            val_ef = self._val_ef_loss(g_params, ef_model, validation)
            val_history.append(val_ef)
            history.append(
                {
                    "epoch": epoch,
                    **{k: v / n_batches for k, v in sums.items()},
                    "val_ef": val_ef,
                }
            )
            if val_ef < best_val:
                best_val = val_ef
                best_epoch = epoch
                best_g = {k: v.copy() for k, v in g_params.items()}
                best_d = {k: v.copy() for k, v in d_params.items()}
                since_best = 0
            else:
                since_best += 1
                if since_best >= self.patience:
                    break

        for k, v in ef_model.params_.items():
            if not np.array_equal(v, ef_before[k]):
                raise RuntimeError("frozen EF parameters changed during mapping training")
        self.generator_params_ = best_g
        self.discriminator_params_ = best_d
        self.best_epoch_ = best_epoch
        self.best_val_ef_ = best_val
        self.val_ef_history_ = val_history
        self.history_ = history
        self.code_dim_ = dim
        return self

    def _map(self, prefix: str, vec: np.ndarray) -> np.ndarray:
        check_fitted(self, "generator_params_")
        arr = np.asarray(vec, dtype=np.float64)
        single = arr.ndim == 1
        leaves = ad.leaf_vars(self.generator_params_)
        out = _mlp(leaves, prefix, Var(arr[None] if single else arr), self.n_layers).data
        return out[0] if single else out

    def map_image_to_mesh(self, vec: np.ndarray) -> np.ndarray:
        return self._map("g_mesh", vec)

    def map_mesh_to_image(self, vec: np.ndarray) -> np.ndarray:
        return self._map("g_image", vec)

    def save(self, path) -> None:
        check_fitted(self, "generator_params_")
        tensors = {f"g:{k}": v for k, v in self.generator_params_.items()}
        tensors.update({f"d:{k}": v for k, v in self.discriminator_params_.items()})
        meta = dict(self.get_params())
        meta["class"] = type(self).__name__
        meta["best_epoch"] = self.best_epoch_
        meta["best_val_ef"] = self.best_val_ef_
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "LatentCycleMapper":
        tensors, meta = load_checkpoint(path)
        kwargs = {k: v for k, v in meta.items() if k not in ("class", "best_epoch", "best_val_ef")}
        est = cls(**kwargs)
        est.generator_params_ = {k[2:]: v for k, v in tensors.items() if k.startswith("g:")}
        est.discriminator_params_ = {k[2:]: v for k, v in tensors.items() if k.startswith("d:")}
        est.best_epoch_ = meta.get("best_epoch", 0)
        est.best_val_ef_ = meta.get("best_val_ef", float("nan"))
        est.val_ef_history_ = []
        est.history_ = []
        return est


def infer_mesh_video(cine, image_ae, mapper: LatentCycleMapper, mesh_ae, n_frames: int) -> MeshVideo:
    """Reconstruct a mesh video from a normalized cine stack.

    Encode with the frozen image autoencoder, translate the code into the
    mesh latent space, and decode ``n_frames`` uniformly spaced trajectory
    points with the frozen mesh decoder; temporal resolution is independent
    of the input frame count.
    """
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    code_i = image_ae.encode(cine)
    vec_m = mapper.map_image_to_mesh(code_i.to_vector())
    code_m = TrajectoryCode.from_vector(vec_m)
    return mesh_ae.decode_video(code_m, n_frames)
