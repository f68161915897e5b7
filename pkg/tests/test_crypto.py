import functools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybriddb.crypto import (MODULUS, AheCipher, AuthenticationError, DetCipher, LayoutMismatch,
                             MalformedCiphertext, MasterKey, MheCipher, ModulusMismatch,
                             NonInvertible, OreCipher, OreRangeError, Ordering, RndCipher, Scheme,
                             SchemeMismatch, cipher_from_bytes, derive_column_key, det_encrypt,
                             ore_compare, ore_encode_signed, ore_encrypt, rnd_decrypt, rnd_encrypt,
                             sahe_add, sahe_add_plain, sahe_decrypt, sahe_encrypt, sahe_sub,
                             smhe_decrypt, smhe_div, smhe_encrypt, smhe_mul, smhe_mul_plain)
from hybriddb.crypto import phe
from hybriddb.crypto.codec import decrypt_value, encrypt_value

MASTER = MasterKey(bytes(range(32)))
K_AHE = derive_column_key(MASTER, "t.a", Scheme.AHE)
K_MHE = derive_column_key(MASTER, "t.a", Scheme.MHE)
K_ORE = derive_column_key(MASTER, "t.a", Scheme.ORE)
K_DET = derive_column_key(MASTER, "t.a", Scheme.DET)
K_RND = derive_column_key(MASTER, "t.a", Scheme.RND)

zn = st.integers(min_value=0, max_value=MODULUS - 1)


def test_modulus_is_an_odd_128_bit_prime():
    sympy = pytest.importorskip("sympy")
    assert MODULUS % 2 == 1 and MODULUS.bit_length() == 128
    assert sympy.isprime(MODULUS)


class TestKeys:
    def test_deterministic(self):
        assert derive_column_key(MASTER, "col_a", Scheme.ORE) == derive_column_key(MASTER, "col_a", Scheme.ORE)

    def test_domain_separation(self):
        a = derive_column_key(MASTER, "col_a", Scheme.ORE)
        b = derive_column_key(MASTER, "col_a", Scheme.DET)
        assert a.key_bytes != b.key_bytes

    def test_master_keys_do_not_collide(self):
        seen = set()
        for _ in range(100):
            k1, k2 = MasterKey.generate(), MasterKey.generate()
            a = derive_column_key(k1, "col_a", Scheme.ORE).key_bytes
            b = derive_column_key(k2, "col_a", Scheme.ORE).key_bytes
            assert a != b
            seen.update((a, b))
        assert len(seen) == 200

    def test_empty_label_rejected(self):
        with pytest.raises(ValueError):
            derive_column_key(MASTER, b"", Scheme.AHE)

    def test_master_key_length(self):
        with pytest.raises(ValueError):
            MasterKey(b"short")

    def test_master_key_not_in_repr(self):
        assert MASTER.secret.hex() not in repr(MASTER)


class TestAdditive:
    def test_round_trip(self):
        for m in [0, 1, 42, MODULUS - 1, 2**64]:
            assert sahe_decrypt(sahe_encrypt(m, K_AHE, nonce=7), K_AHE) == m

    def test_nondeterministic(self):
        assert sahe_encrypt(5, K_AHE, 1).to_bytes() != sahe_encrypt(5, K_AHE, 2).to_bytes()

    def test_zero_is_the_mask(self):
        assert sahe_encrypt(0, K_AHE, 99).masked_sum == phe.prf(K_AHE, 99) % MODULUS

    def test_add_example(self):
        assert sahe_decrypt(sahe_add(sahe_encrypt(17, K_AHE), sahe_encrypt(25, K_AHE)), K_AHE) == 42

    def test_add_oracle_1000_pairs(self):
        rng = random.Random(1)
        for _ in range(1000):
            a, b = rng.randrange(MODULUS), rng.randrange(MODULUS)
            c = sahe_add(sahe_encrypt(a, K_AHE), sahe_encrypt(b, K_AHE))
            assert sahe_decrypt(c, K_AHE) == (a + b) % MODULUS

    @given(zn)
    def test_identity_and_cancellation(self, m):
        e = sahe_encrypt(m, K_AHE)
        assert sahe_decrypt(sahe_add(sahe_encrypt(0, K_AHE), e), K_AHE) == m
        assert sahe_decrypt(sahe_sub(e, e), K_AHE) == 0

    @given(zn, zn)
    def test_sub_and_add_plain(self, a, b):
        ea, eb = sahe_encrypt(a, K_AHE), sahe_encrypt(b, K_AHE)
        assert sahe_decrypt(sahe_sub(ea, eb), K_AHE) == (a - b) % MODULUS
        assert sahe_decrypt(sahe_add_plain(ea, b), K_AHE) == (a + b) % MODULUS

    def test_overlapping_nonces_counted_with_multiplicity(self):
        e = sahe_encrypt(11, K_AHE, nonce=3)
        triple = sahe_add(sahe_add(e, e), e)
        assert sahe_decrypt(triple, K_AHE) == 33
        assert triple.cardinality == 3

    @pytest.mark.parametrize("k", [1, 2, 5, 40])
    def test_leakage_cardinality(self, k):
        acc = sahe_encrypt(1, K_AHE)
        for _ in range(k - 1):
            acc = sahe_add(acc, sahe_encrypt(1, K_AHE))
        assert len(acc.nonces) == k
        assert sahe_decrypt(acc, K_AHE) == k

    def test_scheme_mismatch(self):
        with pytest.raises(SchemeMismatch):
            sahe_encrypt(1, K_MHE)

    def test_modulus_mismatch(self):
        a = sahe_encrypt(1, K_AHE)
        b = AheCipher(a.masked_sum, a.nonces, modulus_id=9)
        with pytest.raises(ModulusMismatch):
            sahe_add(a, b)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            sahe_encrypt(MODULUS, K_AHE)


class TestMultiplicative:
    def test_mul_example(self):
        assert smhe_decrypt(smhe_mul(smhe_encrypt(6, K_MHE), smhe_encrypt(7, K_MHE)), K_MHE) == 42

    @given(zn, zn)
    def test_mul_oracle(self, a, b):
        c = smhe_mul(smhe_encrypt(a, K_MHE), smhe_encrypt(b, K_MHE))
        assert smhe_decrypt(c, K_MHE) == a * b % MODULUS

    @given(zn)
    def test_identity(self, m):
        assert smhe_decrypt(smhe_mul(smhe_encrypt(1, K_MHE), smhe_encrypt(m, K_MHE)), K_MHE) == m

    @given(st.integers(min_value=1, max_value=MODULUS - 1))
    def test_self_division(self, m):
        e = smhe_encrypt(m, K_MHE)
        assert smhe_decrypt(smhe_div(e, e), K_MHE) == 1

    def test_exact_division_and_mul_plain(self):
        q = smhe_div(smhe_encrypt(84, K_MHE), smhe_encrypt(2, K_MHE))
        assert smhe_decrypt(q, K_MHE) == 42
        assert smhe_decrypt(smhe_mul_plain(q, 3), K_MHE) == 126

    def test_division_by_zero(self):
        with pytest.raises(NonInvertible):
            smhe_div(smhe_encrypt(3, K_MHE), smhe_encrypt(0, K_MHE))

    def test_nondeterministic(self):
        assert smhe_encrypt(5, K_MHE).to_bytes() != smhe_encrypt(5, K_MHE).to_bytes()


def _cmp(x, y):
    return (x > y) - (x < y)


class TestOre:
    def test_example(self):
        assert ore_compare(ore_encrypt(5, K_ORE), ore_encrypt(7, K_ORE)) is Ordering.LESS

    def test_equal_across_encryptions(self):
        a, b = ore_encrypt(123456, K_ORE), ore_encrypt(123456, K_ORE)
        assert a.to_bytes() != b.to_bytes()
        assert ore_compare(a, b) is Ordering.EQUAL
        assert ore_compare(a, a) is Ordering.EQUAL

    def test_exhaustive_8bit_sort(self):
        cts = {v: ore_encrypt(v, K_ORE, bits=8) for v in range(256)}
        shuffled = list(range(256))
        random.Random(3).shuffle(shuffled)
        ordered = sorted(shuffled, key=functools.cmp_to_key(lambda x, y: ore_compare(cts[x], cts[y])))
        assert ordered == list(range(256))

    def test_random_32bit_pairs(self):
        rng = random.Random(4)
        for _ in range(2000):
            x = rng.getrandbits(32)
            y = x if rng.random() < 0.05 else rng.getrandbits(32)
            assert ore_compare(ore_encrypt(x, K_ORE), ore_encrypt(y, K_ORE)) == _cmp(x, y)

    @settings(max_examples=60)
    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
    def test_64bit(self, x, y):
        assert ore_compare(ore_encrypt(x, K_ORE, bits=64), ore_encrypt(y, K_ORE, bits=64)) == _cmp(x, y)

    @pytest.mark.parametrize("width", [2, 4, 8])
    def test_block_widths(self, width):
        rng = random.Random(width)
        vals = [rng.getrandbits(16) for _ in range(60)]
        cts = [ore_encrypt(v, K_ORE, bits=16, block_width=width) for v in vals]
        assert cts[0].block_count == 16 // width
        for i in range(60):
            for j in range(60):
                assert ore_compare(cts[i], cts[j]) == _cmp(vals[i], vals[j])

    def test_signed_offset_preserves_order(self):
        vals = [-2**31, -5, -1, 0, 1, 2**31 - 1]
        cts = [ore_encrypt(ore_encode_signed(v), K_ORE) for v in vals]
        for i in range(len(vals)):
            for j in range(len(vals)):
                assert ore_compare(cts[i], cts[j]) == _cmp(vals[i], vals[j])
        with pytest.raises(OreRangeError):
            ore_encode_signed(2**31)

    def test_out_of_range(self):
        with pytest.raises(OreRangeError):
            ore_encrypt(256, K_ORE, bits=8)

    def test_layout_and_key_mismatch(self):
        other = derive_column_key(MASTER, "t.b", Scheme.ORE)
        with pytest.raises(LayoutMismatch):
            ore_compare(ore_encrypt(1, K_ORE), ore_encrypt(1, other))
        with pytest.raises(LayoutMismatch):
            ore_compare(ore_encrypt(1, K_ORE, bits=16), ore_encrypt(1, K_ORE, bits=32))

    def test_comparison_leaks_only_first_differing_block(self):
        # 0x1234_5600 and 0x1234_56ff share three leading blocks.
        a, b = ore_encrypt(0x12345600, K_ORE), ore_encrypt(0x123456FF, K_ORE)
        assert a.tokens[:3] == b.tokens[:3] and a.tokens[3] != b.tokens[3]


class TestDetRnd:
    def test_det_is_deterministic(self):
        assert det_encrypt(b"abc", K_DET) == det_encrypt(b"abc", K_DET)
        assert det_encrypt(b"abc", K_DET) != det_encrypt(b"abd", K_DET)

    def test_rnd_round_trip_and_nondeterminism(self):
        a, b = rnd_encrypt(b"payload", K_RND), rnd_encrypt(b"payload", K_RND)
        assert a != b
        assert rnd_decrypt(a, K_RND) == b"payload"

    def test_rnd_tamper(self):
        c = rnd_encrypt(b"payload", K_RND)
        flipped = RndCipher(c.nonce, bytes([c.body[0] ^ 1]) + c.body[1:], c.tag)
        with pytest.raises(AuthenticationError):
            rnd_decrypt(flipped, K_RND)

    def test_rnd_bound_to_column(self):
        other = derive_column_key(MASTER, "t.b", Scheme.RND)
        with pytest.raises(AuthenticationError):
            rnd_decrypt(rnd_encrypt(b"x", K_RND), other)


class TestSerialization:
    @pytest.mark.parametrize("make", [
        lambda: sahe_add(sahe_encrypt(3, K_AHE), sahe_encrypt(4, K_AHE)),
        lambda: smhe_div(smhe_encrypt(3, K_MHE), smhe_encrypt(4, K_MHE)),
        lambda: ore_encrypt(77, K_ORE),
        lambda: det_encrypt(b"x" * 8, K_DET),
        lambda: rnd_encrypt(b"y" * 8, K_RND),
    ])
    def test_round_trip(self, make):
        c = make()
        buf = c.to_bytes()
        assert buf[0] == 1
        assert cipher_from_bytes(buf) == c
        assert type(c).from_bytes(buf) == c

    @pytest.mark.parametrize("cls", [AheCipher, MheCipher, OreCipher, DetCipher, RndCipher])
    def test_truncation_rejected(self, cls):
        c = {AheCipher: sahe_encrypt(1, K_AHE), MheCipher: smhe_encrypt(1, K_MHE),
             OreCipher: ore_encrypt(1, K_ORE), DetCipher: det_encrypt(b"abcdefgh", K_DET),
             RndCipher: rnd_encrypt(b"abcdefgh", K_RND)}[cls]
        buf = c.to_bytes()
        with pytest.raises(MalformedCiphertext):
            cls.from_bytes(buf[:-1])
        with pytest.raises(MalformedCiphertext):
            cls.from_bytes(buf + b"\0")

    def test_unknown_version(self):
        with pytest.raises(MalformedCiphertext):
            cipher_from_bytes(b"\x07\x01")


@pytest.mark.parametrize("scheme", [Scheme.AHE, Scheme.MHE, Scheme.DET, Scheme.RND])
@pytest.mark.parametrize("value", [0, -17, 2**40])
def test_codec_round_trip(scheme, value):
    key = derive_column_key(MASTER, "t.c", scheme)
    assert decrypt_value(encrypt_value(value, key), key) == value


@pytest.mark.parametrize("scheme", [Scheme.AHE, Scheme.MHE, Scheme.ORE, Scheme.RND])
def test_fresh_encryptions_differ(scheme):
    key = derive_column_key(MASTER, "t.d", scheme)
    assert encrypt_value(9, key).to_bytes() != encrypt_value(9, key).to_bytes()


def test_det_fresh_encryptions_equal():
    assert encrypt_value(9, K_DET).to_bytes() == encrypt_value(9, K_DET).to_bytes()


def test_text_codec():
    assert decrypt_value(encrypt_value("héllo", K_DET), K_DET, is_text=True) == "héllo"
    a, b = encrypt_value("BARBAR", K_ORE), encrypt_value("OUGHT", K_ORE)
    assert ore_compare(a, b) is Ordering.LESS
