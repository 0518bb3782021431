import numpy as np
import pytest
import torch

from advbiom.checkpoint import (
    load_checkpoint,
    module_from_arrays,
    module_to_arrays,
    optimizer_from_arrays,
    optimizer_to_arrays,
    restore_rng_state,
    rng_state_arrays,
    save_checkpoint,
)


class TestContainer:
    def test_header_and_arrays_round_trip(self, tmp_path, rng):
        arrays = {
            "weights.a": rng.normal(size=(4, 3)).astype(np.float32),
            "weights.b": rng.integers(0, 10, size=7),
        }
        header = {"kind": "test", "nested": {"x": 1}}
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, header, arrays)
        loaded_header, loaded_arrays = load_checkpoint(path)
        assert loaded_header["kind"] == "test"
        assert loaded_header["nested"] == {"x": 1}
        assert loaded_header["format_version"] == 1
        for name, arr in arrays.items():
            np.testing.assert_array_equal(loaded_arrays[name], arr)

    def test_rejects_wrong_version(self, tmp_path):
        import json
        import zipfile

        path = tmp_path / "bad.ckpt"
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("header.json", json.dumps({"format_version": 99}))
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestTorchBridges:
    def test_module_round_trip(self):
        torch.manual_seed(0)
        net = torch.nn.Sequential(torch.nn.Conv2d(1, 4, 3), torch.nn.BatchNorm2d(4))
        arrays = module_to_arrays(net, "m")
        torch.manual_seed(1)
        other = torch.nn.Sequential(torch.nn.Conv2d(1, 4, 3), torch.nn.BatchNorm2d(4))
        module_from_arrays(other, arrays, "m")
        for (ka, va), (kb, vb) in zip(net.state_dict().items(), other.state_dict().items()):
            assert ka == kb
            np.testing.assert_array_equal(va.numpy(), vb.numpy())

    def test_optimizer_round_trip_preserves_adam_state(self):
        torch.manual_seed(2)
        net = torch.nn.Linear(4, 2)
        opt = torch.optim.Adam(net.parameters(), lr=1e-3, betas=(0.5, 0.9))
        for _ in range(3):
            opt.zero_grad()
            net(torch.randn(5, 4)).sum().backward()
            opt.step()
        arrays = optimizer_to_arrays(opt, "opt")

        net2 = torch.nn.Linear(4, 2)
        net2.load_state_dict(net.state_dict())
        opt2 = torch.optim.Adam(net2.parameters(), lr=1e-3, betas=(0.5, 0.9))
        optimizer_from_arrays(opt2, arrays, "opt")

        s1, s2 = opt.state_dict()["state"], opt2.state_dict()["state"]
        assert set(s1) == set(s2)
        for idx in s1:
            for key in s1[idx]:
                np.testing.assert_array_equal(
                    np.asarray(s1[idx][key]), np.asarray(s2[idx][key])
                )

    def test_rng_state_round_trip(self):
        rng = np.random.default_rng(5)
        rng.normal(size=10)
        torch.manual_seed(3)
        torch.randn(4)
        header, arrays = rng_state_arrays(rng)

        expected_np = rng.normal(size=5)
        expected_torch = torch.randn(5)

        rng2 = np.random.default_rng(0)
        restore_rng_state(header, arrays, rng2)
        np.testing.assert_array_equal(rng2.normal(size=5), expected_np)
        np.testing.assert_array_equal(torch.randn(5).numpy(), expected_torch.numpy())
