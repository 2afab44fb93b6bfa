"""Image-domain sequence autoencoder.

Per-view convolutional features feed a gated recurrent pass whose final
states fuse into trajectory parameters (circle radius, phase, static code);
the decoder reconstructs all views of any frame from the corresponding point
on the circular latent trajectory, which enforces temporal consistency and
exact periodicity.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from . import layers
from .autodiff import TrainingDivergedError, Var
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import VIEW_NAMES, CineSequence
from .optim import AdamState, adam_step
from .trajectory import TrajectoryCode, latent_point
from .validation import as_float_array, check_fitted

# softplus(SOFTPLUS_UNIT_SHIFT) = 1, so radii start near one.
SOFTPLUS_UNIT_SHIFT = float(np.log(np.e - 1.0))


def _stack_of(x) -> np.ndarray:
    if isinstance(x, CineSequence):
        return x.stack()
    return as_float_array(x, "cine stack", ndim=4)


class ImageSequenceAutoencoder(BaseEstimator):
    """Autoencoder from multi-view cine stacks to trajectory codes and back.

    Parameters
    ----------
    views : tuple of view names consumed from the (N, 4, H, W) input stack;
        ``("lax",)`` gives the single-view configuration.
    latent_dim : total latent dimension d (circle plus static code).
    kappa : weight of the trajectory regularizer ``kappa*(||s||^2 + (r-1)^2)``.

    Inputs are expected z-score normalized.  ``fit`` minimizes the mean
    squared frame reconstruction error plus the regularizer with Adam.
    """

    def __init__(
        self,
        image_size: int = 64,
        views: tuple[str, ...] = VIEW_NAMES,
        latent_dim: int = 16,
        conv_channels: tuple[int, int, int] = (8, 16, 32),
        hidden: int = 64,
        epochs: int = 40,
        batch_size: int = 8,
        lr: float = 1e-3,
        kappa: float = 1e-4,
        seed: int = 0,
    ):
        self.image_size = image_size
        self.views = views
        self.latent_dim = latent_dim
        self.conv_channels = conv_channels
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.kappa = kappa
        self.seed = seed

    # -- architecture -------------------------------------------------------

    def _view_indices(self) -> list[int]:
        try:
            return [VIEW_NAMES.index(v) for v in self.views]
        except ValueError as exc:
            raise ValueError(f"unknown view in {self.views}; expected from {VIEW_NAMES}") from exc

    def _feature_grid(self) -> tuple[int, int]:
        if self.image_size % 8 != 0:
            raise ValueError(f"image_size must be divisible by 8, got {self.image_size}")
        side = self.image_size // 8
        return side, self.conv_channels[2] * side * side

    def _init_params(self) -> dict[str, np.ndarray]:
        if self.latent_dim < 3:
            raise ValueError("latent_dim must be >= 3")
        rng = np.random.default_rng(self.seed)
        c1, c2, c3 = self.conv_channels
        side, feat = self._feature_grid()
        params: dict[str, np.ndarray] = {}
        for view in self.views:
            params.update(layers.conv_params(rng, f"enc.{view}.conv1", 1, c1, 3))
            params.update(layers.conv_params(rng, f"enc.{view}.conv2", c1, c2, 3))
            params.update(layers.conv_params(rng, f"enc.{view}.conv3", c2, c3, 3))
            params.update(layers.gru_params(rng, f"enc.{view}.gru", feat, self.hidden))
        params.update(
            layers.dense_params(rng, "head", self.hidden * len(self.views), self.latent_dim + 1)
        )
        params.update(layers.dense_params(rng, "dec.fc", self.latent_dim, feat))
        params.update(layers.conv_transpose_params(rng, "dec.convt1", c3, c2, 4))
        params.update(layers.conv_transpose_params(rng, "dec.convt2", c2, c1, 4))
        params.update(layers.conv_transpose_params(rng, "dec.convt3", c1, len(self.views), 4))
        return params

    def _encode_graph(self, leaves, batch: np.ndarray) -> dict[str, Var]:
        """Trajectory parts for a (B, N, V_all, H, W) normalized batch."""
        b, n = batch.shape[:2]
        finals = []
        for view, vi in zip(self.views, self._view_indices()):
            frames = Var(
                batch[:, :, vi].reshape(b * n, 1, self.image_size, self.image_size),
                name=f"in.{view}",
            )
            h = ad.relu(layers.conv(leaves, f"enc.{view}.conv1", frames, stride=2, pad=1))
            h = ad.relu(layers.conv(leaves, f"enc.{view}.conv2", h, stride=2, pad=1))
            h = ad.relu(layers.conv(leaves, f"enc.{view}.conv3", h, stride=2, pad=1))
            feats = h.reshape(b, n, -1)
            steps = [feats[:, t] for t in range(n)]
            finals.append(layers.gru_sequence(leaves, f"enc.{view}.gru", steps, self.hidden))
        fused = ad.concat(finals, axis=1) if len(finals) > 1 else finals[0]
        head = layers.dense(leaves, "head", fused)
        r = ad.softplus(head[:, 0:1] + SOFTPLUS_UNIT_SHIFT)
        u = head[:, 1:2]
        v = head[:, 2:3]
        rho = ad.sqrt(u * u + v * v + 1e-12)
        return {
            "r": r,
            "cos": u / rho,
            "sin": v / rho,
            "static": head[:, 3:],
        }

    def _latent_at(self, parts: dict[str, Var], t: int, n_frames: int) -> Var:
        angle = 2.0 * np.pi * (int(t) % n_frames) / n_frames
        ca, sa = np.cos(angle), np.sin(angle)
        x = parts["r"] * (ca * parts["cos"] - sa * parts["sin"])
        y = parts["r"] * (sa * parts["cos"] + ca * parts["sin"])
        return ad.concat([x, y, parts["static"]], axis=1)

    def _decode_graph(self, leaves, z: Var) -> Var:
        """Frames for latent rows z (M, d) -> (M, V, H, W)."""
        side, _ = self._feature_grid()
        h = ad.relu(layers.dense(leaves, "dec.fc", z))
        h = h.reshape(z.shape[0], self.conv_channels[2], side, side)
        h = ad.relu(layers.conv_transpose(leaves, "dec.convt1", h, stride=2, pad=1))
        h = ad.relu(layers.conv_transpose(leaves, "dec.convt2", h, stride=2, pad=1))
        return layers.conv_transpose(leaves, "dec.convt3", h, stride=2, pad=1)

    def _loss_graph(self, leaves, batch: np.ndarray, kappa: float | None = None) -> Var:
        b, n = batch.shape[:2]
        kappa = self.kappa if kappa is None else kappa
        parts = self._encode_graph(leaves, batch)
        zs = ad.concat([self._latent_at(parts, t, n) for t in range(n)], axis=0)
        recon = self._decode_graph(leaves, zs)
        target = batch[:, :, self._view_indices()]  # (B, N, V, H, W)
        target = np.ascontiguousarray(target.swapaxes(0, 1)).reshape(
            b * n, len(self.views), self.image_size, self.image_size
        )
        recon_err = ad.mse(recon, target)
        reg = ((parts["static"] ** 2).sum(axis=1) + (parts["r"][:, 0] - 1.0) ** 2).mean()
        return recon_err + kappa * reg

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y=None) -> "ImageSequenceAutoencoder":
        stacks = [_stack_of(x) for x in X]
        if not stacks:
            raise ValueError("training pool is empty")
        data = np.stack(stacks)
        if data.shape[1] < 2:
            raise ValueError("sequences need at least 2 frames")
        if data.shape[3] != self.image_size:
            raise ValueError(
                f"stack image size {data.shape[3]} != configured {self.image_size}"
            )
        params = self._init_params()
        state = AdamState.initial(params)
        rng = np.random.default_rng(self.seed + 1)
        history: list[float] = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(data))
            losses = []
            for start in range(0, len(data), self.batch_size):
                batch = data[order[start : start + self.batch_size]]
                leaves = ad.leaf_vars(params)
                loss = self._loss_graph(leaves, batch)
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

    def transform(self, X) -> np.ndarray:
        """Flattened trajectory code vectors, one row per sequence."""
        return np.stack([self.encode(x).to_vector() for x in X])

    def encode(self, x) -> TrajectoryCode:
        check_fitted(self, "params_")
        stack = _stack_of(x)
        leaves = ad.leaf_vars(self.params_)
        parts = self._encode_graph(leaves, stack[None])
        r = float(parts["r"].data[0, 0])
        phase = float(np.arctan2(parts["sin"].data[0, 0], parts["cos"].data[0, 0]))
        return TrajectoryCode(radius=r, phase=phase, static=parts["static"].data[0])

    def decode(self, code: TrajectoryCode, t: int, n_frames: int) -> np.ndarray:
        """One frame per configured view, shape (V, H, W)."""
        check_fitted(self, "params_")
        z = latent_point(code, t, n_frames)
        leaves = ad.leaf_vars(self.params_)
        return self._decode_graph(leaves, Var(z[None])).data[0]

    def reconstruction_loss(self, x, kappa: float | None = None) -> float:
        """Regularized reconstruction loss of one sequence (evaluation only)."""
        check_fitted(self, "params_")
        stack = _stack_of(x)
        leaves = ad.leaf_vars(self.params_)
        return self._loss_graph(leaves, stack[None], kappa=kappa).item()

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        check_fitted(self, "params_")
        meta = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()}
        meta["cell_type"] = layers.GATED_CELL
        meta["class"] = type(self).__name__
        save_checkpoint(path, self.params_, meta)

    @classmethod
    def load(cls, path) -> "ImageSequenceAutoencoder":
        tensors, meta = load_checkpoint(path)
        kwargs = {k: v for k, v in meta.items() if k not in ("cell_type", "class")}
        for key in ("views", "conv_channels"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        est = cls(**kwargs)
        est.params_ = tensors
        est.history_ = []
        return est
