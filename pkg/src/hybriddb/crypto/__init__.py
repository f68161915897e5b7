from .keys import ColumnKey, MasterKey, Scheme, SchemeMismatch, derive_column_key
from .ore import (LayoutMismatch, OreCipher, OreRangeError, Ordering, ore_compare,
                  ore_encode_signed, ore_encrypt)
from .phe import (MODULUS, AheCipher, MheCipher, ModulusMismatch, NonInvertible, decode_signed,
                  encode_signed, sahe_add, sahe_add_plain, sahe_decrypt, sahe_encrypt, sahe_sub,
                  smhe_decrypt, smhe_div, smhe_encrypt, smhe_mul, smhe_mul_plain)
from .symmetric import (AuthenticationError, DetCipher, RndCipher, det_decrypt, det_encrypt,
                        rnd_decrypt, rnd_encrypt)
from .wire import (TAG_AHE, TAG_DET, TAG_MHE, TAG_ORE, TAG_RND, VERSION, MalformedCiphertext)

_BY_TAG = {TAG_AHE: AheCipher, TAG_MHE: MheCipher, TAG_ORE: OreCipher,
           TAG_DET: DetCipher, TAG_RND: RndCipher}

SCHEME_OF = {AheCipher: Scheme.AHE, MheCipher: Scheme.MHE, OreCipher: Scheme.ORE,
             DetCipher: Scheme.DET, RndCipher: Scheme.RND}


def cipher_from_bytes(buf: bytes):
    """Decode any serialized ciphertext by its type tag."""
    if len(buf) < 2 or buf[0] != VERSION:
        raise MalformedCiphertext("bad ciphertext header")
    try:
        cls = _BY_TAG[buf[1]]
    except KeyError:
        raise MalformedCiphertext(f"unknown type tag {buf[1]:#x}") from None
    return cls.from_bytes(buf)


__all__ = [n for n in dir() if not n.startswith("_")]
