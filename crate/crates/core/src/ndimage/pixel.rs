use std::fmt;
use std::str::FromStr;

/// Sample types, including the bit-packed ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PixelType {
    Bool1,
    Bit,
    Uint2,
    Uint4,
    Uint8,
    Uint12,
    Uint16,
    Uint32,
    Uint64,
    Int8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl PixelType {
    pub const ALL: [PixelType; 14] = [
        PixelType::Bool1,
        PixelType::Bit,
        PixelType::Uint2,
        PixelType::Uint4,
        PixelType::Uint8,
        PixelType::Uint12,
        PixelType::Uint16,
        PixelType::Uint32,
        PixelType::Uint64,
        PixelType::Int8,
        PixelType::Int16,
        PixelType::Int32,
        PixelType::Float32,
        PixelType::Float64,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PixelType::Bool1 => "bool1",
            PixelType::Bit => "bit",
            PixelType::Uint2 => "uint2",
            PixelType::Uint4 => "uint4",
            PixelType::Uint8 => "uint8",
            PixelType::Uint12 => "uint12",
            PixelType::Uint16 => "uint16",
            PixelType::Uint32 => "uint32",
            PixelType::Uint64 => "uint64",
            PixelType::Int8 => "int8",
            PixelType::Int16 => "int16",
            PixelType::Int32 => "int32",
            PixelType::Float32 => "float32",
            PixelType::Float64 => "float64",
        }
    }

    /// Code used by the NCHK container (the position in [`PixelType::ALL`]).
    pub fn code(self) -> u8 {
        PixelType::ALL.iter().position(|&t| t == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        PixelType::ALL.get(code as usize).copied()
    }

    pub fn bits(self) -> u32 {
        match self {
            PixelType::Bool1 | PixelType::Bit => 1,
            PixelType::Uint2 => 2,
            PixelType::Uint4 => 4,
            PixelType::Uint8 | PixelType::Int8 => 8,
            PixelType::Uint12 => 12,
            PixelType::Uint16 | PixelType::Int16 => 16,
            PixelType::Uint32 | PixelType::Int32 | PixelType::Float32 => 32,
            PixelType::Uint64 | PixelType::Float64 => 64,
        }
    }

    /// Sample width is not a whole number of bytes.
    pub fn is_packed(self) -> bool {
        !self.bits().is_multiple_of(8)
    }

    pub fn is_float(self) -> bool {
        matches!(self, PixelType::Float32 | PixelType::Float64)
    }

    pub fn is_signed(self) -> bool {
        matches!(
            self,
            PixelType::Int8 | PixelType::Int16 | PixelType::Int32 | PixelType::Float32 | PixelType::Float64
        )
    }

    /// Integer range; `None` for floating-point types.
    pub fn int_range(self) -> Option<(i128, i128)> {
        if self.is_float() {
            return None;
        }
        let bits = self.bits();
        Some(if self.is_signed() {
            (-(1i128 << (bits - 1)), (1i128 << (bits - 1)) - 1)
        } else {
            (0, (1i128 << bits) - 1)
        })
    }

    pub fn min_value(self) -> f64 {
        match self {
            PixelType::Float32 => f32::MIN as f64,
            PixelType::Float64 => f64::MIN,
            _ => self.int_range().unwrap().0 as f64,
        }
    }

    pub fn max_value(self) -> f64 {
        match self {
            PixelType::Float32 => f32::MAX as f64,
            PixelType::Float64 => f64::MAX,
            _ => self.int_range().unwrap().1 as f64,
        }
    }

    fn mask(self) -> u64 {
        if self.bits() == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits()) - 1
        }
    }

    /// Encodes `v` as raw sample bits: integers round half away from zero and
    /// clamp to range, NaN stores as 0.
    #[inline]
    pub fn encode(self, v: f64) -> u64 {
        match self {
            PixelType::Float32 => (v as f32).to_bits() as u64,
            PixelType::Float64 => v.to_bits(),
            _ => {
                if v.is_nan() {
                    return 0;
                }
                // `as i128` saturates, so infinities land on the clamp bounds.
                self.encode_int(v.round() as i128)
            }
        }
    }

    #[inline]
    pub fn decode(self, raw: u64) -> f64 {
        match self {
            PixelType::Float32 => f32::from_bits(raw as u32) as f64,
            PixelType::Float64 => f64::from_bits(raw),
            _ => self.decode_int(raw) as f64,
        }
    }

    /// Clamps an exact integer into range and returns its raw bits. Float
    /// types store the nearest representable value.
    #[inline]
    pub fn encode_int(self, v: i128) -> u64 {
        match self.int_range() {
            None => self.encode(v as f64),
            Some((lo, hi)) => (v.clamp(lo, hi) as u64) & self.mask(),
        }
    }

    /// Exact integer value of raw bits; floats truncate toward zero.
    #[inline]
    pub fn decode_int(self, raw: u64) -> i128 {
        match self {
            PixelType::Float32 | PixelType::Float64 => self.decode(raw) as i128,
            _ if self.is_signed() => {
                let shift = 64 - self.bits();
                (((raw << shift) as i64) >> shift) as i128
            }
            _ => raw as i128,
        }
    }

    /// Stored value after a round trip through this type.
    pub fn clamp(self, v: f64) -> f64 {
        self.decode(self.encode(v))
    }

    /// Renders one sample; the boolean type prints `true`/`false`.
    pub fn render_sample(self, v: f64) -> String {
        match self {
            PixelType::Bool1 => (v != 0.0).to_string(),
            _ => v.to_string(),
        }
    }
}

impl fmt::Display for PixelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PixelType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PixelType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown pixel type `{s}`"))
    }
}

/// Bytes needed to hold `n` samples: bit-packed types pack without padding,
/// rounded up to a whole byte.
pub fn packed_storage_bytes(pixel_type: PixelType, n_samples: u64) -> u64 {
    let bits = pixel_type.bits() as u64;
    if bits.is_multiple_of(8) {
        n_samples * (bits / 8)
    } else {
        // Split the product so huge counts cannot overflow.
        let whole = (n_samples / 8) * bits;
        whole + ((n_samples % 8) * bits).div_ceil(8)
    }
}
