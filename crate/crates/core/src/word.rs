//! EVM word arithmetic over `U256`, two's complement for the signed family.

use ruint::aliases::U256;

pub type Word = U256;

pub fn from_bool(b: bool) -> Word {
    if b {
        Word::from(1u8)
    } else {
        Word::ZERO
    }
}

pub fn is_negative(x: Word) -> bool {
    x.bit(255)
}

fn abs(x: Word) -> Word {
    if is_negative(x) {
        x.wrapping_neg()
    } else {
        x
    }
}

pub fn div(a: Word, b: Word) -> Word {
    a.checked_div(b).unwrap_or(Word::ZERO)
}

pub fn rem(a: Word, b: Word) -> Word {
    a.checked_rem(b).unwrap_or(Word::ZERO)
}

pub fn sdiv(a: Word, b: Word) -> Word {
    if b.is_zero() {
        return Word::ZERO;
    }
    let q = abs(a) / abs(b);
    if is_negative(a) != is_negative(b) {
        q.wrapping_neg()
    } else {
        q
    }
}

/// Result takes the sign of the dividend.
pub fn smod(a: Word, b: Word) -> Word {
    if b.is_zero() {
        return Word::ZERO;
    }
    let r = abs(a) % abs(b);
    if is_negative(a) {
        r.wrapping_neg()
    } else {
        r
    }
}

pub fn slt(a: Word, b: Word) -> bool {
    match (is_negative(a), is_negative(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a < b,
    }
}

pub fn sgt(a: Word, b: Word) -> bool {
    slt(b, a)
}

pub fn addmod(a: Word, b: Word, n: Word) -> Word {
    if n.is_zero() {
        Word::ZERO
    } else {
        a.add_mod(b, n)
    }
}

pub fn mulmod(a: Word, b: Word, n: Word) -> Word {
    if n.is_zero() {
        Word::ZERO
    } else {
        a.mul_mod(b, n)
    }
}

pub fn exp(base: Word, exponent: Word) -> Word {
    base.wrapping_pow(exponent)
}

/// Extend the sign of the low `byte_index + 1` bytes of `x`.
pub fn signextend(byte_index: Word, x: Word) -> Word {
    if byte_index >= Word::from(31) {
        return x;
    }
    let bit = byte_index.to::<usize>() * 8 + 7;
    let mask = (Word::from(1u8) << bit) - Word::from(1u8);
    if x.bit(bit) {
        x | !mask
    } else {
        x & mask
    }
}

/// `BYTE`: the `i`-th byte counting from the most significant end.
pub fn byte(i: Word, x: Word) -> Word {
    if i >= Word::from(32) {
        return Word::ZERO;
    }
    Word::from(x.to_be_bytes::<32>()[i.to::<usize>()])
}

pub fn shl(shift: Word, x: Word) -> Word {
    if shift >= Word::from(256) {
        Word::ZERO
    } else {
        x << shift.to::<usize>()
    }
}

pub fn shr(shift: Word, x: Word) -> Word {
    if shift >= Word::from(256) {
        Word::ZERO
    } else {
        x >> shift.to::<usize>()
    }
}

pub fn sar(shift: Word, x: Word) -> Word {
    let neg = is_negative(x);
    if shift >= Word::from(256) {
        return if neg { Word::MAX } else { Word::ZERO };
    }
    let s = shift.to::<usize>();
    if neg {
        !((!x) >> s)
    } else {
        x >> s
    }
}

/// Word at `offset` of `data`, zero-padded past the end.
pub fn word_at(data: &[u8], offset: Word) -> Word {
    let mut buf = [0u8; 32];
    if offset < Word::from(data.len()) {
        let start = offset.to::<usize>();
        let end = (start + 32).min(data.len());
        buf[..end - start].copy_from_slice(&data[start..end]);
    }
    Word::from_be_bytes(buf)
}

/// Interpret `x` as a small non-negative integer when it fits in `u64`.
pub fn as_u64(x: Word) -> Option<u64> {
    if x.bit_len() <= 64 {
        Some(x.to::<u64>())
    } else {
        None
    }
}
