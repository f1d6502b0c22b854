import numpy as np
import pytest
import torch

from styleback import cyclegan as cg
from styleback.data import ImageTensor, SyntheticSceneSpec, synthesize_scene
from styleback.exceptions import ArgumentError, ConfigError, NumericError

MICRO_ARCH = cg.ArchSpec(base_channels=8, n_residual_blocks=2, image_size=32)


def domain(pattern, offset, n, size=32):
    return [synthesize_scene(SyntheticSceneSpec(pattern, "none", seed=offset + i,
                                                height=size, width=size))
            for i in range(n)]


@pytest.fixture(scope="module")
def micro_model():
    return cg.build_model(MICRO_ARCH, seed=3)


# ---------------------------------------------------------------------------
# losses

def test_cycle_loss_identity_is_zero(rng):
    img = ImageTensor(rng.random((3, 16, 16)).astype(np.float32))
    assert cg.cycle_consistency_loss(img, img) == 0.0


def test_cycle_loss_constant_offset_in_evaluated_range():
    x = ImageTensor(np.full((3, 16, 16), 0.5, dtype=np.float32), "unit")
    # recon at 0.75 unit expressed in signed range; converted consistently
    recon = ImageTensor(np.full((3, 16, 16), 0.5, dtype=np.float32), "signed")
    assert cg.cycle_consistency_loss(x, recon) == pytest.approx(0.25, abs=1e-7)


def test_cycle_loss_matches_elementwise_oracle(rng):
    a = ImageTensor(rng.random((3, 12, 12)).astype(np.float32))
    b = ImageTensor(rng.random((3, 12, 12)).astype(np.float32))
    expected = np.mean(np.abs(a.values.astype(np.float64) - b.values.astype(np.float64)))
    assert abs(cg.cycle_consistency_loss(a, b) - expected) < 1e-9


def test_cycle_loss_shape_mismatch(rng):
    a = ImageTensor(rng.random((3, 16, 16)).astype(np.float32))
    b = ImageTensor(rng.random((3, 8, 8)).astype(np.float32))
    with pytest.raises(ArgumentError):
        cg.cycle_consistency_loss(a, b)


def test_adversarial_losses_closed_forms():
    ones = np.ones((1, 5, 5))
    zeros = np.zeros((1, 5, 5))
    halves = np.full((1, 5, 5), 0.5)
    gen, _ = cg.adversarial_losses(ones, ones)
    assert gen == 0.0  # generator fully fools the discriminator
    _, disc = cg.adversarial_losses(ones, zeros)
    assert disc == 0.0  # perfect discriminator
    _, disc = cg.adversarial_losses(halves, halves)
    assert disc == pytest.approx(0.25)  # 0.5*0.25 + 0.5*0.25


def test_adversarial_losses_reject_non_finite():
    bad = np.array([[np.nan]])
    with pytest.raises(NumericError):
        cg.adversarial_losses(bad, bad)


# ---------------------------------------------------------------------------
# configs / training groups

def test_group_f_pairing_accepted():
    config = cg.group_config("F", epochs=1)
    assert config.source_domain == "van_gogh_stylized_cityscapes"
    assert config.target_domain == "cityscapes"


def test_group_e_pairing():
    config = cg.group_config("E", epochs=1)
    assert (config.source_domain, config.target_domain) == (
        "van_gogh_stylized_kitti", "kitti")


def test_wrong_domain_pairing_rejected():
    with pytest.raises(ConfigError):
        cg.TrainingGroupConfig("E", "van_gogh_paintings", "kitti", epochs=1)


def test_unknown_group_rejected():
    with pytest.raises(ConfigError):
        cg.TrainingGroupConfig("Z", "x", "y", epochs=1)


def test_zero_epochs_rejected():
    with pytest.raises(ArgumentError):
        cg.group_config("toy", epochs=0)


def test_identity_weight_defaults_to_half_lambda_cycle():
    config = cg.group_config("toy", epochs=1, lambda_cycle=8.0)
    assert config.lambda_identity == 4.0


def test_arch_validation():
    with pytest.raises(ArgumentError):
        cg.ArchSpec(n_residual_blocks=1)
    with pytest.raises(ArgumentError):
        cg.ArchSpec(image_size=30)


# ---------------------------------------------------------------------------
# model behavior

def test_generator_preserves_spatial_dims(micro_model):
    for size in (32, 64):
        x = torch.zeros(1, 3, size, size)
        assert micro_model.gen_ab(x).shape == (1, 3, size, size)


def test_translate_untrained_is_deterministic(micro_model, rng):
    img = ImageTensor(rng.random((3, 32, 32)).astype(np.float32))
    a = cg.translate(micro_model, img, "a_to_b")
    b = cg.translate(micro_model, img, "a_to_b")
    assert np.array_equal(a.values, b.values)


def test_translate_output_shape_matches_input(micro_model, rng):
    img = ImageTensor(rng.random((3, 32, 32)).astype(np.float32))
    out = cg.translate(micro_model, img, "b_to_a")
    assert (out.channels, out.height, out.width) == (3, 32, 32)
    assert out.range_tag == "unit"


def test_translate_rejects_bad_direction(micro_model, rng):
    img = ImageTensor(rng.random((3, 32, 32)).astype(np.float32))
    with pytest.raises(ArgumentError):
        cg.translate(micro_model, img, "sideways")


def test_translate_rejects_unresized_input(micro_model, rng):
    img = ImageTensor(rng.random((3, 16, 16)).astype(np.float32))
    with pytest.raises(ArgumentError, match="resized"):
        cg.translate(micro_model, img, "a_to_b")


def test_build_model_same_seed_identical():
    a = cg.build_model(MICRO_ARCH, seed=5)
    b = cg.build_model(MICRO_ARCH, seed=5)
    for pa, pb in zip(a.gen_ab.parameters(), b.gen_ab.parameters()):
        assert torch.equal(pa, pb)


def test_history_buffer_caps_size(rng):
    buf = cg.ImageHistoryBuffer(np.random.default_rng(0), max_size=10)
    for _ in range(6):
        out = buf.query(torch.zeros(3, 3, 4, 4))
        assert out.shape == (3, 3, 4, 4)
    assert len(buf.images) == 10


# ---------------------------------------------------------------------------
# training

@pytest.fixture(scope="module")
def micro_training():
    source = domain("checker", 1000, 6)
    target = domain("gradient", 2000, 6)
    group = cg.group_config("toy", epochs=2, seed=7, arch=MICRO_ARCH)
    model = cg.train(group, source, target)
    return group, source, target, model


def test_training_improves_cycle_loss(micro_training):
    group, source, target, model = micro_training
    eval_a = domain("checker", 3000, 3)
    eval_b = domain("gradient", 4000, 3)
    baseline = cg.build_model(group.arch, group.seed)
    pre = 0.5 * (cg.mean_cycle_loss(baseline, eval_a, "a")
                 + cg.mean_cycle_loss(baseline, eval_b, "b"))
    post = 0.5 * (cg.mean_cycle_loss(model, eval_a, "a")
                  + cg.mean_cycle_loss(model, eval_b, "b"))
    assert post < pre


def test_training_history_has_all_columns(micro_training):
    _, _, _, model = micro_training
    assert len(model.history) == 2
    for row in model.history:
        assert set(row) == {"epoch", "gen_loss", "disc_loss", "cycle_loss",
                            "identity_loss"}


def test_training_log_csv(tmp_path, micro_training):
    _, _, _, model = micro_training
    path = tmp_path / "log.csv"
    cg.write_training_log_csv(model.history, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,gen_loss,disc_loss,cycle_loss,identity_loss"
    assert len(lines) == 3


def test_training_is_reproducible():
    source = domain("checker", 1000, 3)
    target = domain("gradient", 2000, 3)
    group = cg.group_config("toy", epochs=1, seed=9, arch=MICRO_ARCH)
    a = cg.train(group, source, target)
    b = cg.train(group, source, target)
    for pa, pb in zip(a.gen_ab.parameters(), b.gen_ab.parameters()):
        assert torch.equal(pa, pb)
    assert a.history == b.history


def test_training_with_zero_identity_reports_zero():
    source = domain("checker", 1000, 2)
    target = domain("gradient", 2000, 2)
    group = cg.group_config("toy", epochs=1, seed=1, arch=MICRO_ARCH,
                            lambda_identity=0.0)
    model = cg.train(group, source, target)
    assert model.history[0]["identity_loss"] == 0.0


def test_empty_dataset_rejected():
    group = cg.group_config("toy", epochs=1, arch=MICRO_ARCH)
    with pytest.raises(ConfigError):
        cg.train(group, [], domain("gradient", 0, 2))


def test_divergence_aborts_with_numeric_error():
    group = cg.group_config("toy", epochs=3, seed=0, arch=MICRO_ARCH,
                            learning_rate=1e12)
    with pytest.raises(NumericError, match="diverged"):
        cg.train(group, domain("checker", 0, 3), domain("gradient", 50, 3))


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_round_trip_bit_identical(tmp_path, micro_model, rng):
    img = ImageTensor(rng.random((3, 32, 32)).astype(np.float32))
    before = cg.translate(micro_model, img, "a_to_b")
    path = cg.save_checkpoint(micro_model, tmp_path / "model.pt")
    loaded = cg.load_checkpoint(path)
    after = cg.translate(loaded, img, "a_to_b")
    assert np.array_equal(before.values, after.values)
    assert loaded.arch == micro_model.arch
    assert loaded.training_meta.seed == micro_model.training_meta.seed


def test_checkpoint_checksum_guard(tmp_path, micro_model):
    path = cg.save_checkpoint(micro_model, tmp_path / "model.pt")
    blob = path.read_bytes()
    path.write_bytes(blob[:-1] + bytes([blob[-1] ^ 0xFF]))
    with pytest.raises(ConfigError, match="checksum"):
        cg.load_checkpoint(path)


def test_checkpoint_missing_sidecar(tmp_path, micro_model):
    path = cg.save_checkpoint(micro_model, tmp_path / "model.pt")
    path.with_suffix(".json").unlink()
    with pytest.raises(ConfigError):
        cg.load_checkpoint(path)
