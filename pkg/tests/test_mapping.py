"""EF regressor, adversarial/cycle/EF losses, and the latent cycle mapper."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.special import logit

from cine2mesh import autodiff as ad
from cine2mesh.autodiff import Var
from cine2mesh.mapping import (
    EjectionFractionRegressor,
    LatentCycleMapper,
    adversarial_losses,
    cycle_loss,
    ef_loss,
    infer_mesh_video,
)

DIM = 5


def toy_codes(n, seed=0):
    """Codes whose last coordinate linearly determines a synthetic EF."""
    rng = np.random.default_rng(seed)
    codes = rng.normal(size=(n, DIM))
    ef = 0.5 + 0.3 * np.tanh(codes[:, -1])
    return codes, ef


def identity_generators(dim=DIM, shift=0.0):
    """Single-layer generator pair: G_mesh adds `shift`, G_image subtracts it."""
    return {
        "g_mesh.fc1.w": np.eye(dim),
        "g_mesh.fc1.b": np.full(dim, shift),
        "g_image.fc1.w": np.eye(dim),
        "g_image.fc1.b": np.full(dim, -shift),
    }


def zero_discriminators(dim=DIM):
    return {
        "d_mesh.fc1.w": np.zeros((dim, 1)),
        "d_mesh.fc1.b": np.zeros(1),
        "d_image.fc1.w": np.zeros((dim, 1)),
        "d_image.fc1.b": np.zeros(1),
    }


def constant_ef_model(value: float, dim=DIM) -> EjectionFractionRegressor:
    model = EjectionFractionRegressor(hidden=(), epochs=0)
    model.params_ = {
        "ef.fc1.w": np.zeros((dim, 1)),
        "ef.fc1.b": np.array([logit(value)]),
    }
    model.history_ = []
    return model


class TestEfRegressor:
    def test_predictions_in_unit_interval(self):
        codes, ef = toy_codes(40, seed=1)
        model = EjectionFractionRegressor(epochs=30, seed=0).fit(codes, ef)
        pred = model.predict(codes)
        assert ((pred > 0) & (pred < 1)).all()

    def test_learns_toy_relation(self):
        codes, ef = toy_codes(80, seed=2)
        model = EjectionFractionRegressor(epochs=250, seed=0).fit(codes, ef)
        holdout, ef_holdout = toy_codes(40, seed=3)
        mae = np.abs(model.predict(holdout) - ef_holdout).mean()
        assert mae < 0.10

    def test_zero_epochs_returns_initialized(self):
        codes, ef = toy_codes(10)
        model = EjectionFractionRegressor(epochs=0).fit(codes, ef)
        assert model.history_ == []
        assert model.predict(codes).shape == (10,)

    def test_same_seed_identical(self):
        codes, ef = toy_codes(20, seed=4)
        a = EjectionFractionRegressor(epochs=10, seed=5).fit(codes, ef)
        b = EjectionFractionRegressor(epochs=10, seed=5).fit(codes, ef)
        for k in a.params_:
            np.testing.assert_array_equal(a.params_[k], b.params_[k])

    def test_labels_out_of_range_rejected(self):
        codes, _ = toy_codes(5)
        with pytest.raises(ValueError, match="0, 1"):
            EjectionFractionRegressor(epochs=1).fit(codes, np.array([0.5, 1.2, 0.4, 0.3, 0.1]))

    def test_checkpoint_round_trip(self, tmp_path):
        codes, ef = toy_codes(15, seed=6)
        model = EjectionFractionRegressor(epochs=5, seed=1).fit(codes, ef)
        model.save(tmp_path / "ef.cdtw")
        loaded = EjectionFractionRegressor.load(tmp_path / "ef.cdtw")
        np.testing.assert_array_equal(loaded.predict(codes), model.predict(codes))


class TestAdversarialLosses:
    def test_indifferent_discriminator_gives_ln2_per_term(self):
        params = {**identity_generators(), **zero_discriminators()}
        phi_i, _ = toy_codes(8, seed=7)
        phi_m, _ = toy_codes(8, seed=8)
        out = adversarial_losses(params, phi_i, phi_m, n_layers=1)
        # Two BCE terms of ln 2 each per discriminator.
        assert out["discriminator_mesh"] == pytest.approx(2 * np.log(2.0), rel=1e-12)
        assert out["discriminator_image"] == pytest.approx(2 * np.log(2.0), rel=1e-12)
        assert out["generator_mesh"] == pytest.approx(np.log(2.0), rel=1e-12)

    def test_perfect_discriminator_limits(self):
        # Real mesh codes sit at +5 in the first coordinate; the zero-weight
        # generator with bias -5 emits fakes at -5.  A discriminator reading
        # the first coordinate at gain 4 separates them almost perfectly.
        dim = DIM
        params = {
            "g_mesh.fc1.w": np.zeros((dim, dim)),
            "g_mesh.fc1.b": np.full(dim, -5.0),
            "g_image.fc1.w": np.eye(dim),
            "g_image.fc1.b": np.zeros(dim),
            "d_mesh.fc1.w": np.concatenate([[4.0], np.zeros(dim - 1)])[:, None],
            "d_mesh.fc1.b": np.zeros(1),
            "d_image.fc1.w": np.zeros((dim, 1)),
            "d_image.fc1.b": np.zeros(1),
        }
        phi_m = np.full((6, dim), 5.0)
        phi_i = np.zeros((6, dim))
        out = adversarial_losses(params, phi_i, phi_m, n_layers=1)
        assert out["discriminator_mesh"] < 1e-6
        assert out["generator_mesh"] > 5.0

    def test_gradients_pass_fd_check(self):
        rng = np.random.default_rng(9)
        dims = [3, 4, 3]
        params = {}
        from cine2mesh.mapping import _mlp_params

        for prefix in ("g_mesh", "g_image"):
            params.update(_mlp_params(rng, prefix, [3, 4, 3]))
        for prefix in ("d_mesh", "d_image"):
            params.update(_mlp_params(rng, prefix, [3, 4, 1]))
        phi_i = rng.normal(size=(4, 3))
        phi_m = rng.normal(size=(4, 3))

        def loss_fn(leaves):
            from cine2mesh.mapping import _mlp

            fake_m = _mlp(leaves, "g_mesh", Var(phi_i), 2)
            fake_i = _mlp(leaves, "g_image", Var(phi_m), 2)
            return (
                ad.bce_with_logits(_mlp(leaves, "d_mesh", Var(phi_m), 2), 1.0)
                + ad.bce_with_logits(_mlp(leaves, "d_mesh", fake_m, 2), 0.0)
                + ad.bce_with_logits(_mlp(leaves, "d_image", fake_i, 2), 1.0)
            )

        assert ad.grad_check(loss_fn, params) < 1e-4
        del dims


class TestCycleLoss:
    def test_identity_generators_zero(self):
        params = identity_generators()
        phi_i, _ = toy_codes(6, seed=10)
        phi_m, _ = toy_codes(6, seed=11)
        assert cycle_loss(params, phi_i, phi_m, n_layers=1) == pytest.approx(0.0, abs=1e-12)

    def test_exact_inverse_shifts_zero(self):
        params = identity_generators(shift=0.7)
        phi_i, _ = toy_codes(6, seed=12)
        phi_m, _ = toy_codes(6, seed=13)
        assert cycle_loss(params, phi_i, phi_m, n_layers=1) == pytest.approx(0.0, abs=1e-12)

    def test_constant_offset_round_trip(self):
        # G_mesh adds c and G_image is the identity, so each composed round
        # trip shifts by c: the loss is mean |c| per coordinate, per term.
        c = 0.3
        params = identity_generators()
        params["g_mesh.fc1.b"] = np.full(DIM, c)
        phi_i, _ = toy_codes(5, seed=14)
        phi_m, _ = toy_codes(5, seed=15)
        assert cycle_loss(params, phi_i, phi_m, n_layers=1) == pytest.approx(2 * c, rel=1e-9)


class TestEfLoss:
    def test_matching_constant_predictor_zero(self):
        params = identity_generators()
        model = constant_ef_model(0.6)
        phi_i, _ = toy_codes(4, seed=16)
        phi_m, _ = toy_codes(4, seed=17)
        labels = np.full(4, 0.6)
        assert ef_loss(params, model, phi_i, labels, phi_m, labels, n_layers=1) == pytest.approx(
            0.0, abs=1e-9
        )

    def test_constant_half_vs_point_six(self):
        params = identity_generators()
        model = constant_ef_model(0.5)
        phi_i, _ = toy_codes(4, seed=18)
        phi_m, _ = toy_codes(4, seed=19)
        labels = np.full(4, 0.6)
        out = ef_loss(params, model, phi_i, labels, phi_m, labels, n_layers=1)
        assert out == pytest.approx(0.2, rel=1e-9)


class TestMapperTraining:
    def _pools(self):
        phi_i, ef_i = toy_codes(48, seed=20)
        phi_m, ef_m = toy_codes(48, seed=21)
        val_i, val_efi = toy_codes(12, seed=22)
        val_m, val_efm = toy_codes(12, seed=23)
        validation = {
            "phi_image": val_i,
            "ef_image": val_efi,
            "phi_mesh": val_m,
            "ef_mesh": val_efm,
        }
        return phi_i, phi_m, ef_i, ef_m, validation

    def _ef_model(self):
        codes, ef = toy_codes(100, seed=24)
        return EjectionFractionRegressor(epochs=200, seed=3).fit(codes, ef)

    def test_training_improves_validation_ef(self):
        phi_i, phi_m, ef_i, ef_m, validation = self._pools()
        ef_model = self._ef_model()
        mapper = LatentCycleMapper(hidden=16, max_epochs=30, patience=30, seed=0)
        mapper.fit(phi_i, phi_m, ef_i, ef_m, ef_model, validation)
        assert mapper.best_val_ef_ < mapper.val_ef_history_[0]
        assert mapper.best_val_ef_ == min(mapper.val_ef_history_)

    def test_returned_params_achieve_best_val(self):
        phi_i, phi_m, ef_i, ef_m, validation = self._pools()
        ef_model = self._ef_model()
        mapper = LatentCycleMapper(hidden=16, max_epochs=15, patience=5, seed=1)
        mapper.fit(phi_i, phi_m, ef_i, ef_m, ef_model, validation)
        recomputed = ef_loss(
            mapper.generator_params_,
            ef_model,
            validation["phi_image"],
            validation["ef_image"],
            validation["phi_mesh"],
            validation["ef_mesh"],
            mapper.n_layers,
        )
        assert recomputed == pytest.approx(mapper.best_val_ef_, rel=1e-12)

    def test_frozen_ef_params_bit_identical(self):
        phi_i, phi_m, ef_i, ef_m, validation = self._pools()
        ef_model = self._ef_model()
        before = {k: v.copy() for k, v in ef_model.params_.items()}
        mapper = LatentCycleMapper(hidden=8, max_epochs=5, patience=5, seed=2)
        mapper.fit(phi_i, phi_m, ef_i, ef_m, ef_model, validation)
        for k in before:
            np.testing.assert_array_equal(ef_model.params_[k], before[k])

    def test_default_betas_match_reference(self):
        mapper = LatentCycleMapper()
        assert (mapper.beta1, mapper.beta2, mapper.beta3, mapper.beta4) == (1.0, 1.0, 10.0, 10.0)

    def test_beta3_scales_cycle_gradient_linearly(self):
        # The cycle term's contribution to the generator gradient doubles
        # exactly when beta3 doubles.
        rng = np.random.default_rng(25)
        from cine2mesh.mapping import _mlp, _mlp_params

        g_params = {
            **_mlp_params(rng, "g_mesh", [DIM, 8, DIM]),
            **_mlp_params(rng, "g_image", [DIM, 8, DIM]),
        }
        phi_i, _ = toy_codes(6, seed=26)
        phi_m, _ = toy_codes(6, seed=27)

        def generator_grads(beta3):
            leaves = ad.leaf_vars(g_params)
            fake_m = _mlp(leaves, "g_mesh", Var(phi_i), 2)
            fake_i = _mlp(leaves, "g_image", Var(phi_m), 2)
            cyc = ad.l1(_mlp(leaves, "g_image", fake_m, 2), phi_i) + ad.l1(
                _mlp(leaves, "g_mesh", fake_i, 2), phi_m
            )
            anchor = (fake_m**2).mean() + (fake_i**2).mean()
            (anchor + beta3 * cyc).backward()
            return ad.grads_of(leaves)

        g0 = generator_grads(0.0)
        g1 = generator_grads(1.0)
        g2 = generator_grads(2.0)
        for k in g_params:
            np.testing.assert_allclose(
                g2[k] - g0[k], 2.0 * (g1[k] - g0[k]), rtol=1e-9, atol=1e-12
            )

    def test_zero_weight_terms_leave_no_gradient(self):
        # With beta3 = beta4 = 0 the generator objective reduces to the
        # adversarial terms: parameters unreachable from them get no update.
        phi_i, phi_m, ef_i, ef_m, validation = self._pools()
        ef_model = self._ef_model()
        mapper = LatentCycleMapper(
            hidden=8, beta3=0.0, beta4=0.0, max_epochs=2, patience=5, seed=4
        )
        mapper.fit(phi_i, phi_m, ef_i, ef_m, ef_model, validation)
        assert mapper.history_[0]["cycle"] > 0  # still logged, just unweighted

    def test_checkpoint_round_trip(self, tmp_path):
        phi_i, phi_m, ef_i, ef_m, validation = self._pools()
        ef_model = self._ef_model()
        mapper = LatentCycleMapper(hidden=8, max_epochs=3, patience=5, seed=5)
        mapper.fit(phi_i, phi_m, ef_i, ef_m, ef_model, validation)
        mapper.save(tmp_path / "map.cdtw")
        loaded = LatentCycleMapper.load(tmp_path / "map.cdtw")
        vec = phi_i[0]
        np.testing.assert_array_equal(
            loaded.map_image_to_mesh(vec), mapper.map_image_to_mesh(vec)
        )
        np.testing.assert_array_equal(
            loaded.map_mesh_to_image(vec), mapper.map_mesh_to_image(vec)
        )


class TestInference:
    def test_infer_mesh_video_shapes_and_period(self):
        from cine2mesh.imageae import ImageSequenceAutoencoder
        from cine2mesh.meshae import MeshSequenceAutoencoder
        from cine2mesh.shapemodel import default_shape_model, generate_cohort
        from cine2mesh.dataset import render_cine, zscore_normalize

        model = default_shape_model(seed=0, detail=1, n_modes=4, cohort_size=10)
        sample = generate_cohort(model, count=1, n_frames=4, seed=6)[0]
        cine = zscore_normalize(render_cine(sample.video, image_size=16, seed=1).stack())

        image_ae = ImageSequenceAutoencoder(
            image_size=16, latent_dim=6, conv_channels=(2, 3, 4), hidden=4, epochs=0
        )
        image_ae.fit([cine])
        mesh_ae = MeshSequenceAutoencoder(
            template=model.mean_mesh(), latent_dim=6, gc_width=6, hidden=4, epochs=0
        )
        mesh_ae.fit([sample.video])
        mapper = LatentCycleMapper(hidden=8, max_epochs=0, patience=1, seed=7)
        codes = np.tile(image_ae.encode(cine).to_vector(), (4, 1))
        efs = np.full(4, 0.5)
        ef_model = constant_ef_model(0.5, dim=codes.shape[1])
        validation = {"phi_image": codes, "ef_image": efs, "phi_mesh": codes, "ef_mesh": efs}
        mapper.fit(codes, codes, efs, efs, ef_model, validation)

        video = infer_mesh_video(cine, image_ae, mapper, mesh_ae, n_frames=9)
        assert video.n_frames == 9
        assert video[0].same_topology(model.mean_mesh())
        again = infer_mesh_video(cine, image_ae, mapper, mesh_ae, n_frames=9)
        np.testing.assert_array_equal(video.vertex_array(), again.vertex_array())
        # 32 output frames from a 4-frame cine: temporal resolution is free.
        dense = infer_mesh_video(cine, image_ae, mapper, mesh_ae, n_frames=32)
        assert dense.n_frames == 32
