//! Adaptive binary arithmetic coding of quantized latents.
//!
//! Quantization indices are binarized as a truncated-unary prefix with a
//! fixed-length suffix for the escape range, and each bin is coded with an
//! adaptive binary context. Contexts are allocated per feature channel and
//! per bin position, and are initialized from the entropy model so the coder
//! starts near the model cross-entropy instead of learning from scratch.

use crate::codec::entropy::{ChannelPmf, EntropyModel};
use crate::codec::nn::Tensor;
use crate::codec::{LatentBitstream, LatentTensor};
use crate::error::{CsiError, Result};

const TOP: u32 = 1 << 24;
const PROB_BITS: u32 = 16;
const PROB_ONE: u32 = 1 << PROB_BITS;
const PROB_MIN: u16 = 32;
const PROB_MAX: u16 = (PROB_ONE - 32) as u16;
const ADAPT_SHIFT: u32 = 7;
/// Unary prefix length before switching to the fixed-length escape suffix.
/// Prefix bins are initialized at the exact PMF conditionals, so keeping
/// typical supports inside the prefix keeps the coder near cross-entropy;
/// the fixed-length suffix only backstops pathologically wide supports.
const UNARY_CUTOFF: usize = 64;
/// Pattern coded after the payload so corrupt streams are detected.
const TRAILER: u16 = 0xA5C3;

/// Adaptive probability state for one binary context; `p0` is P(bit = 0)
/// in 1/65536 units.
#[derive(Debug, Clone, Copy)]
struct BitModel {
    p0: u16,
}

impl BitModel {
    fn from_prob(p0: f64) -> BitModel {
        let q = (p0 * PROB_ONE as f64).round() as i64;
        BitModel {
            p0: q.clamp(PROB_MIN as i64, PROB_MAX as i64) as u16,
        }
    }

    fn update(&mut self, bit: bool) {
        if bit {
            self.p0 -= self.p0 >> ADAPT_SHIFT;
            self.p0 = self.p0.max(PROB_MIN);
        } else {
            self.p0 += ((PROB_ONE as u32 - self.p0 as u32) >> ADAPT_SHIFT) as u16;
            self.p0 = self.p0.min(PROB_MAX);
        }
    }
}

struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn encode(&mut self, model: &mut BitModel, bit: bool) {
        let bound = (self.range >> PROB_BITS) * model.p0 as u32;
        if !bit {
            self.range = bound;
        } else {
            self.low += bound as u64;
            self.range -= bound;
        }
        model.update(bit);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        // 32-bit wrapping shift: bits 24..31 were captured in the cache
        self.low = ((self.low as u32) << 8) as u64;
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            bytes,
            pos: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    fn decode(&mut self, model: &mut BitModel) -> bool {
        let bound = (self.range >> PROB_BITS) * model.p0 as u32;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        model.update(bit);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
        bit
    }
}

/// Context bank for one feature channel: unary prefix bins plus escape
/// suffix bins.
#[derive(Debug, Clone)]
struct ChannelContexts {
    prefix: Vec<BitModel>,
    suffix: Vec<BitModel>,
    /// Number of prefix bins actually used (min(support-1, cutoff)).
    prefix_len: usize,
    suffix_bits: usize,
    support: usize,
}

impl ChannelContexts {
    fn from_pmf(pmf: &ChannelPmf) -> ChannelContexts {
        let support = pmf.support_len();
        let prefix_len = (support.saturating_sub(1)).min(UNARY_CUTOFF);
        let escape = support.saturating_sub(prefix_len);
        let suffix_bits = if escape > 1 {
            (usize::BITS - (escape - 1).leading_zeros()) as usize
        } else {
            0
        };

        // prefix bin d codes "u > d"; initialize from the conditional
        // probability P(u = d | u >= d)
        let mut tail: f64 = pmf.probs.iter().sum();
        let mut prefix = Vec::with_capacity(prefix_len);
        for d in 0..prefix_len {
            let p_here = pmf.probs[d];
            let p0 = if tail > 0.0 { p_here / tail } else { 0.5 };
            prefix.push(BitModel::from_prob(p0));
            tail -= p_here;
        }

        // suffix bits, MSB first, initialized from the escape-region
        // marginals of each bit
        let mut suffix = Vec::with_capacity(suffix_bits);
        for j in 0..suffix_bits {
            let bit_mask = 1usize << (suffix_bits - 1 - j);
            let mut mass0 = 0.0;
            let mut mass = 0.0;
            for e in 0..escape {
                let p = pmf.probs[prefix_len + e];
                mass += p;
                if e & bit_mask == 0 {
                    mass0 += p;
                }
            }
            let p0 = if mass > 0.0 { mass0 / mass } else { 0.5 };
            suffix.push(BitModel::from_prob(p0));
        }

        ChannelContexts {
            prefix,
            suffix,
            prefix_len,
            suffix_bits,
            support,
        }
    }

    fn encode_symbol(&mut self, enc: &mut RangeEncoder, u: usize) {
        debug_assert!(u < self.support);
        if self.support == 1 {
            return;
        }
        let mut d = 0;
        while d < self.prefix_len && u > d {
            enc.encode(&mut self.prefix[d], true);
            d += 1;
        }
        if d < self.prefix_len {
            enc.encode(&mut self.prefix[d], false);
            return;
        }
        // escape region: fixed-length suffix of u - prefix_len
        let e = u - self.prefix_len;
        for j in 0..self.suffix_bits {
            let bit = e & (1 << (self.suffix_bits - 1 - j)) != 0;
            enc.encode(&mut self.suffix[j], bit);
        }
    }

    fn decode_symbol(&mut self, dec: &mut RangeDecoder) -> usize {
        if self.support == 1 {
            return 0;
        }
        let mut d = 0;
        while d < self.prefix_len {
            if !dec.decode(&mut self.prefix[d]) {
                return d;
            }
            d += 1;
        }
        let mut e = 0usize;
        for j in 0..self.suffix_bits {
            e <<= 1;
            if dec.decode(&mut self.suffix[j]) {
                e |= 1;
            }
        }
        (self.prefix_len + e).min(self.support - 1)
    }
}

fn build_contexts(em: &EntropyModel) -> Vec<ChannelContexts> {
    em.channels.iter().map(ChannelContexts::from_pmf).collect()
}

/// Losslessly encode a quantized latent against an entropy model. Indices
/// outside the model support are clamped to its edges first.
pub fn arith_encode(z: &LatentTensor, em: &EntropyModel) -> Result<LatentBitstream> {
    if !z.quantized {
        return Err(CsiError::InvalidArgument("arith_encode needs a quantized latent".into()));
    }
    if z.values.c != em.n_channels() {
        return Err(CsiError::InvalidArgument(format!(
            "latent has {} channels, model has {}",
            z.values.c,
            em.n_channels()
        )));
    }
    let symbol_count = z.values.data.len();
    if symbol_count == 0 {
        return Ok(LatentBitstream {
            bytes: Vec::new(),
            bit_length: 0,
            symbol_count: 0,
            pmf_id: em.pmf_id,
        });
    }
    let mut contexts = build_contexts(em);
    let mut enc = RangeEncoder::new();
    for c in 0..z.values.c {
        let pmf = &em.channels[c];
        let ctx = &mut contexts[c];
        for &v in z.values.channel(c) {
            let idx = pmf.clamp((v / z.step).round() as i64);
            ctx.encode_symbol(&mut enc, (idx - pmf.min_index) as usize);
        }
    }
    let mut trailer = BitModel::from_prob(0.5);
    for j in (0..16).rev() {
        enc.encode(&mut trailer, TRAILER & (1 << j) != 0);
    }
    let bytes = enc.finish();
    let bit_length = 8 * bytes.len();
    Ok(LatentBitstream {
        bytes,
        bit_length,
        symbol_count,
        pmf_id: em.pmf_id,
    })
}

/// Decode a bitstream back into a quantized latent of the given shape.
pub fn arith_decode(
    bs: &LatentBitstream,
    em: &EntropyModel,
    shape: (usize, usize, usize),
    step: f64,
) -> Result<LatentTensor> {
    let (c, h, w) = shape;
    if bs.pmf_id != em.pmf_id {
        return Err(CsiError::Decode(format!(
            "bitstream pmf_id {:#x} does not match model {:#x}",
            bs.pmf_id, em.pmf_id
        )));
    }
    if c != em.n_channels() {
        return Err(CsiError::Decode(format!(
            "shape has {} channels, model has {}",
            c,
            em.n_channels()
        )));
    }
    if bs.symbol_count != c * h * w {
        return Err(CsiError::Decode(format!(
            "bitstream holds {} symbols, shape needs {}",
            bs.symbol_count,
            c * h * w
        )));
    }
    if bs.symbol_count == 0 {
        return Ok(LatentTensor {
            values: Tensor::zeros(c, h, w),
            step,
            quantized: true,
        });
    }
    let mut contexts = build_contexts(em);
    let mut dec = RangeDecoder::new(&bs.bytes);
    let mut values = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let pmf = &em.channels[ci];
        let ctx = &mut contexts[ci];
        let plane = values.channel_mut(ci);
        for v in plane.iter_mut() {
            let u = ctx.decode_symbol(&mut dec);
            *v = (pmf.min_index + u as i64) as f64 * step;
        }
    }
    let mut trailer = BitModel::from_prob(0.5);
    let mut pattern: u16 = 0;
    for _ in 0..16 {
        pattern <<= 1;
        if dec.decode(&mut trailer) {
            pattern |= 1;
        }
    }
    if pattern != TRAILER {
        return Err(CsiError::Decode("trailer check failed, stream corrupt".into()));
    }
    Ok(LatentTensor {
        values,
        step,
        quantized: true,
    })
}
