"""Mesh-domain sequence autoencoder.

Per-frame graph-convolutional features are pooled over vertices and fed to a
gated recurrent pass that emits trajectory parameters; the decoder deforms a
fixed template by per-vertex displacements predicted with graph convolutions
on the template adjacency, so output topology always matches the template.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from . import layers
from .autodiff import TrainingDivergedError, Var
from .checkpoint import load_checkpoint, save_checkpoint
from .geometry.mesh import MeshError, MeshVideo, SurfaceMesh, adjacency
from .optim import AdamState, adam_step
from .trajectory import TrajectoryCode, latent_point
from .validation import check_fitted
from .imageae import SOFTPLUS_UNIT_SHIFT


def _video_vertices(x, template: SurfaceMesh) -> np.ndarray:
    if isinstance(x, MeshVideo):
        if not template.same_topology(x[0]):
            raise MeshError("video topology differs from the template")
        return x.vertex_array()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != (template.n_vertices, 3):
        raise MeshError(
            f"expected (N, {template.n_vertices}, 3) vertex array, got {arr.shape}"
        )
    return arr


class MeshSequenceAutoencoder(BaseEstimator):
    """Autoencoder from mesh videos to trajectory codes and back.

    The template mesh fixes the decoder topology and the graph used by all
    graph convolutions (symmetric-normalized adjacency).  The encoder reads
    vertex displacements from the template scaled by ``delta_scale`` (the
    static anatomy carries no per-sample information); the decoder anchors on
    template coordinates scaled by ``coord_scale`` and emits displacements
    scaled by ``disp_scale`` (mm).
    """

    def __init__(
        self,
        template: SurfaceMesh | None = None,
        latent_dim: int = 16,
        gc_width: int = 32,
        vertex_feat: int = 8,
        hidden: int = 64,
        epochs: int = 150,
        batch_size: int = 8,
        lr: float = 1e-3,
        kappa: float = 1e-4,
        coord_scale: float = 0.02,
        delta_scale: float = 0.1,
        disp_scale: float = 10.0,
        seed: int = 0,
    ):
        self.template = template
        self.latent_dim = latent_dim
        self.gc_width = gc_width
        self.vertex_feat = vertex_feat
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.kappa = kappa
        self.coord_scale = coord_scale
        self.delta_scale = delta_scale
        self.disp_scale = disp_scale
        self.seed = seed

    # -- architecture -------------------------------------------------------

    def _require_template(self) -> SurfaceMesh:
        if self.template is None:
            raise ValueError("a template mesh is required")
        return self.template

    def _a_hat(self):
        if not hasattr(self, "_a_hat_cache"):
            graph = adjacency(self._require_template(), normalized=True)
            self._a_hat_cache = graph.weights
        return self._a_hat_cache

    def _init_params(self) -> dict[str, np.ndarray]:
        if self.latent_dim < 3:
            raise ValueError("latent_dim must be >= 3")
        rng = np.random.default_rng(self.seed)
        w = self.gc_width
        params: dict[str, np.ndarray] = {}
        params.update(layers.graph_conv_params(rng, "enc.gc1", 3, w))
        params.update(layers.graph_conv_params(rng, "enc.gc2", w, w))
        params.update(layers.gru_params(rng, "enc.gru", w, self.hidden))
        params.update(layers.dense_params(rng, "head", self.hidden, self.latent_dim + 1))
        # The dense stage emits features PER VERTEX so displacements can scale
        # with the code (motion amplitude times position needs that product);
        # a per-sample gain on the hidden features lets independent structure
        # amplitudes modulate the shared displacement fields.
        nv = self._require_template().n_vertices
        params.update(
            layers.dense_params(rng, "dec.fc", self.latent_dim, nv * self.vertex_feat)
        )
        params.update(layers.dense_params(rng, "dec.gain", self.latent_dim, w))
        params.update(layers.graph_conv_params(rng, "dec.gc1", self.vertex_feat + 3, w))
        params.update(layers.graph_conv_params(rng, "dec.gc2", w, 3))
        return params

    def _encode_graph(self, leaves, verts: np.ndarray) -> dict[str, Var]:
        """Trajectory parts for a (B, N, V, 3) vertex batch."""
        b, n, nv, _ = verts.shape
        a_hat = self._a_hat()
        template = self._require_template()
        delta = (verts.reshape(b * n, nv, 3) - template.vertices) * self.delta_scale
        feats = Var(delta, name="in.delta")
        h = ad.tanh(layers.graph_conv(leaves, "enc.gc1", feats, a_hat))
        h = ad.tanh(layers.graph_conv(leaves, "enc.gc2", h, a_hat))
        pooled = h.mean(axis=1).reshape(b, n, self.gc_width)
        steps = [pooled[:, t] for t in range(n)]
        final = layers.gru_sequence(leaves, "enc.gru", steps, self.hidden)
        head = layers.dense(leaves, "head", final)
        r = ad.softplus(head[:, 0:1] + SOFTPLUS_UNIT_SHIFT)
        u = head[:, 1:2]
        v = head[:, 2:3]
        rho = ad.sqrt(u * u + v * v + 1e-12)
        return {"r": r, "cos": u / rho, "sin": v / rho, "static": head[:, 3:]}

    def _latent_at(self, parts: dict[str, Var], t: int, n_frames: int) -> Var:
        angle = 2.0 * np.pi * (int(t) % n_frames) / n_frames
        ca, sa = np.cos(angle), np.sin(angle)
        x = parts["r"] * (ca * parts["cos"] - sa * parts["sin"])
        y = parts["r"] * (sa * parts["cos"] + ca * parts["sin"])
        return ad.concat([x, y, parts["static"]], axis=1)

    def _decode_graph(self, leaves, z: Var) -> Var:
        """Vertex positions (M, V, 3) in mm for latent rows z (M, d)."""
        template = self._require_template()
        nv = template.n_vertices
        m = z.shape[0]
        a_hat = self._a_hat()
        h = layers.dense(leaves, "dec.fc", z).reshape(m, nv, self.vertex_feat)
        anchor = np.broadcast_to(template.vertices * self.coord_scale, (m, nv, 3))
        per_vertex = ad.concat([Var(np.ascontiguousarray(anchor), name="tmpl"), h], axis=2)
        h = ad.tanh(layers.graph_conv(leaves, "dec.gc1", per_vertex, a_hat))
        gain = 1.0 + layers.dense(leaves, "dec.gain", z).reshape(m, 1, self.gc_width)
        disp = layers.graph_conv(leaves, "dec.gc2", h * gain, a_hat)
        return disp * self.disp_scale + template.vertices

    def _loss_graph(self, leaves, verts: np.ndarray, kappa: float | None = None) -> Var:
        b, n, nv, _ = verts.shape
        kappa = self.kappa if kappa is None else kappa
        parts = self._encode_graph(leaves, verts)
        zs = ad.concat([self._latent_at(parts, t, n) for t in range(n)], axis=0)
        recon = self._decode_graph(leaves, zs)
        target = np.ascontiguousarray(verts.swapaxes(0, 1)).reshape(b * n, nv, 3)
        diff = recon - target
        vertex_sq = (diff * diff).sum(axis=2)  # squared distance per vertex, mm^2
        reg = ((parts["static"] ** 2).sum(axis=1) + (parts["r"][:, 0] - 1.0) ** 2).mean()
        return vertex_sq.mean() + kappa * reg

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y=None) -> "MeshSequenceAutoencoder":
        template = self._require_template()
        videos = [_video_vertices(x, template) for x in X]
        if not videos:
            raise ValueError("training pool is empty")
        data = np.stack(videos)
        if data.shape[1] < 2:
            raise ValueError("videos need at least 2 frames")
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
        """Flattened trajectory code vectors, one row per video."""
        return np.stack([self.encode(x).to_vector() for x in X])

    def encode(self, x) -> TrajectoryCode:
        check_fitted(self, "params_")
        verts = _video_vertices(x, self._require_template())
        leaves = ad.leaf_vars(self.params_)
        parts = self._encode_graph(leaves, verts[None])
        r = float(parts["r"].data[0, 0])
        phase = float(np.arctan2(parts["sin"].data[0, 0], parts["cos"].data[0, 0]))
        return TrajectoryCode(radius=r, phase=phase, static=parts["static"].data[0])

    def decode(self, code: TrajectoryCode, t: int, n_frames: int) -> SurfaceMesh:
        """Template deformed to the trajectory point at frame t."""
        check_fitted(self, "params_")
        template = self._require_template()
        z = latent_point(code, t, n_frames)
        leaves = ad.leaf_vars(self.params_)
        verts = self._decode_graph(leaves, Var(z[None])).data[0]
        return template.with_vertices(verts)

    def decode_video(self, code: TrajectoryCode, n_frames: int) -> MeshVideo:
        check_fitted(self, "params_")
        template = self._require_template()
        zs = np.stack([latent_point(code, t, n_frames) for t in range(n_frames)])
        leaves = ad.leaf_vars(self.params_)
        verts = self._decode_graph(leaves, Var(zs)).data
        return MeshVideo([template.with_vertices(v) for v in verts])

    def reconstruction_loss(self, x, kappa: float | None = None) -> float:
        """Regularized reconstruction loss of one video (evaluation only)."""
        check_fitted(self, "params_")
        verts = _video_vertices(x, self._require_template())
        leaves = ad.leaf_vars(self.params_)
        return self._loss_graph(leaves, verts[None], kappa=kappa).item()

    def reconstruct(self, x) -> MeshVideo:
        """Encode a video and decode it back at the same frame count."""
        verts = _video_vertices(x, self._require_template())
        return self.decode_video(self.encode(verts), n_frames=verts.shape[0])

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        check_fitted(self, "params_")
        template = self._require_template()
        tensors = dict(self.params_)
        tensors["template.vertices"] = template.vertices
        tensors["template.faces"] = template.faces.astype(np.float64)
        meta = {
            k: v for k, v in self.get_params().items() if k != "template"
        }
        meta["cell_type"] = layers.GATED_CELL
        meta["class"] = type(self).__name__
        ranges: dict[str, list[int]] = {}
        for name, idx in template.structure_labels.items():
            lo, hi = int(idx.min()), int(idx.max()) + 1
            if len(idx) != hi - lo:
                raise MeshError(f"structure {name!r} labels are not a contiguous range")
            ranges[name] = [lo, hi]
        meta["template.labels"] = ranges
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "MeshSequenceAutoencoder":
        tensors, meta = load_checkpoint(path)
        verts = tensors.pop("template.vertices")
        faces = tensors.pop("template.faces").astype(np.int64)
        labels = {
            name: np.arange(a, b, dtype=np.int64)
            for name, (a, b) in meta["template.labels"].items()
        }
        template = SurfaceMesh(verts, faces, labels)
        kwargs = {
            k: v
            for k, v in meta.items()
            if k not in ("cell_type", "class", "template.labels")
        }
        est = cls(template=template, **kwargs)
        est.params_ = tensors
        est.history_ = []
        return est
