import numpy as np
import pytest

from proqa.errors import ConflictError, FileFormatError, ResolutionError, ShapeError
from proqa.prompt_bank import PromptBank


def make_bank(m=4, d=8):
    bank = PromptBank(m=m, d_model=d)
    bank.init_prompt("format", "extractive", random=(11, 0.02))
    bank.init_prompt("format", "multichoice", random=(12, 0.02))
    bank.init_prompt("task", "extractive", random=(13, 0.02))
    bank.init_prompt("domain", "toyworld", random=(14, 0.02))
    return bank


class TestInit:
    def test_copy_is_bitwise_equal(self):
        bank = make_bank()
        bank.init_prompt("task", "newtask", copy_of=("format", "extractive"))
        assert np.array_equal(bank.get("task", "newtask"), bank.get("format", "extractive"))
        assert bank.meta[("task", "newtask")].initialized_from == "copy_of:format:extractive"

    def test_seeded_random_reproducible(self):
        a = PromptBank(m=4, d_model=8)
        a.init_prompt("task", "t", random=(99, 0.02))
        b = PromptBank(m=4, d_model=8)
        b.init_prompt("task", "t", random=(99, 0.02))
        assert np.array_equal(a.get("task", "t"), b.get("task", "t"))

    def test_random_scale_statistics(self):
        bank = PromptBank(m=100, d_model=100)
        bank.init_prompt("task", "big", random=(5, 0.02))
        std = bank.get("task", "big").std()
        assert 0.015 <= std <= 0.025

    def test_duplicate_rejected(self):
        bank = make_bank()
        with pytest.raises(ConflictError):
            bank.init_prompt("format", "extractive", random=(1, 0.02))

    def test_missing_copy_source(self):
        bank = make_bank()
        with pytest.raises(ResolutionError):
            bank.init_prompt("task", "x", copy_of=("format", "nonexistent"))


class TestZeroShotResolution:
    def test_unseen_task_falls_back_to_format_level(self):
        bank = make_bank()
        got = bank.resolve_for_zero_shot("brand-new-task", "extractive")
        assert np.array_equal(got, bank.get("task", "extractive"))

    def test_seen_task_wins(self):
        bank = make_bank()
        bank.init_prompt("task", "mine", random=(21, 0.02))
        got = bank.resolve_for_zero_shot("mine", "extractive")
        assert np.array_equal(got, bank.get("task", "mine"))

    def test_unseen_format_errors(self):
        bank = make_bank()
        with pytest.raises(ResolutionError):
            bank.resolve_for_zero_shot("task-x", "format-never-pretrained")

    def test_pure(self):
        bank = make_bank()
        before = {k: v.copy() for k, v in bank.entries.items()}
        bank.resolve_for_zero_shot("whatever", "extractive")
        assert set(bank.entries) == set(before)
        for k in before:
            assert np.array_equal(bank.entries[k], before[k])


class TestSwap:
    def test_swap_then_swap_back(self):
        bank = make_bank()
        original = bank.get("task", "extractive").copy()
        replacement = np.full((4, 8), 0.5)
        previous = bank.swap("task", "extractive", replacement)
        assert np.array_equal(previous, original)
        assert np.array_equal(bank.get("task", "extractive"), replacement)
        bank.swap("task", "extractive", previous)
        assert np.array_equal(bank.get("task", "extractive"), original)

    def test_swap_isolated(self):
        bank = make_bank()
        fmt = bank.get("format", "extractive").copy()
        dom = bank.get("domain", "toyworld").copy()
        bank.swap("task", "extractive", np.zeros((4, 8)))
        assert np.array_equal(bank.get("format", "extractive"), fmt)
        assert np.array_equal(bank.get("domain", "toyworld"), dom)

    def test_swap_missing_entry(self):
        bank = make_bank()
        with pytest.raises(ResolutionError):
            bank.swap("task", "ghost", np.zeros((4, 8)))

    def test_swap_bad_shape(self):
        bank = make_bank()
        with pytest.raises(ShapeError):
            bank.swap("task", "extractive", np.zeros((3, 8)))

    def test_swap_bumps_version(self):
        bank = make_bank()
        assert bank.meta[("task", "extractive")].version == 1
        bank.swap("task", "extractive", np.zeros((4, 8)))
        assert bank.meta[("task", "extractive")].version == 2


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        bank = make_bank()
        bank.note_train_steps("task", "extractive", 123)
        path = tmp_path / "bank.bin"
        bank.save(path)
        again = PromptBank.load(path)
        assert again.equals(bank)
        assert again.meta[("task", "extractive")].train_steps == 123

    def test_save_load_save_identical_bytes(self, tmp_path):
        bank = make_bank()
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        bank.save(p1)
        PromptBank.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file(self, tmp_path):
        bank = make_bank()
        path = tmp_path / "bank.bin"
        bank.save(path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FileFormatError):
            PromptBank.load(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FileFormatError):
            PromptBank.load(path)

    def test_version_mismatch_names_both(self, tmp_path):
        import struct

        bank = make_bank()
        path = tmp_path / "bank.bin"
        bank.save(path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(raw))
        with pytest.raises(FileFormatError, match=r"9.*1"):
            PromptBank.load(path)


def test_leaf_shares_storage():
    bank = make_bank()
    leaf = bank.leaf("task", "extractive")
    leaf.array += 1.0
    assert np.array_equal(bank.get("task", "extractive"), leaf.array)
    assert bank.leaf("task", "extractive") is leaf
