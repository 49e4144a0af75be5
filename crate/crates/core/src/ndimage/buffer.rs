use super::pixel::{packed_storage_bytes, PixelType};
use crate::error::{Error, Result};

/// A flat run of samples of one pixel type. Byte-aligned types are stored
/// little-endian; sub-byte and 12-bit types are packed LSB-first with no
/// padding between samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBuffer {
    pixel_type: PixelType,
    len: usize,
    data: Vec<u8>,
}

impl SampleBuffer {
    pub fn zeroed(pixel_type: PixelType, len: usize) -> Result<Self> {
        let bytes = packed_storage_bytes(pixel_type, len as u64) as usize;
        let mut data = Vec::new();
        data.try_reserve_exact(bytes).map_err(|_| Error::Allocation { bytes })?;
        data.resize(bytes, 0);
        Ok(Self { pixel_type, len, data })
    }

    /// Wraps already encoded bytes; `data` must be exactly the packed size.
    pub fn from_bytes(pixel_type: PixelType, len: usize, data: Vec<u8>) -> Result<Self> {
        let expected = packed_storage_bytes(pixel_type, len as u64) as usize;
        if data.len() != expected {
            return Err(Error::Geometry(format!(
                "{len} {pixel_type} samples need {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self { pixel_type, len, data })
    }

    pub fn pixel_type(&self) -> PixelType {
        self.pixel_type
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn byte_len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get_raw(&self, i: usize) -> u64 {
        debug_assert!(i < self.len);
        let d = &self.data;
        match self.pixel_type.bits() {
            8 => d[i] as u64,
            16 => u16::from_le_bytes([d[2 * i], d[2 * i + 1]]) as u64,
            32 => u32::from_le_bytes(d[4 * i..4 * i + 4].try_into().unwrap()) as u64,
            64 => u64::from_le_bytes(d[8 * i..8 * i + 8].try_into().unwrap()),
            12 => {
                let bit = i * 12;
                let byte = bit / 8;
                let word = d[byte] as u64 | (d[byte + 1] as u64) << 8;
                (word >> (bit % 8)) & 0xfff
            }
            bits => {
                let bits = bits as usize;
                let bit = i * bits;
                ((d[bit / 8] >> (bit % 8)) as u64) & ((1 << bits) - 1)
            }
        }
    }

    #[inline]
    pub fn set_raw(&mut self, i: usize, raw: u64) {
        debug_assert!(i < self.len);
        let d = &mut self.data;
        match self.pixel_type.bits() {
            8 => d[i] = raw as u8,
            16 => d[2 * i..2 * i + 2].copy_from_slice(&(raw as u16).to_le_bytes()),
            32 => d[4 * i..4 * i + 4].copy_from_slice(&(raw as u32).to_le_bytes()),
            64 => d[8 * i..8 * i + 8].copy_from_slice(&raw.to_le_bytes()),
            12 => {
                let bit = i * 12;
                let byte = bit / 8;
                let shift = bit % 8;
                let mut word = d[byte] as u16 | (d[byte + 1] as u16) << 8;
                word &= !(0xfffu16 << shift);
                word |= ((raw as u16) & 0xfff) << shift;
                d[byte] = word as u8;
                d[byte + 1] = (word >> 8) as u8;
            }
            bits => {
                let bits = bits as usize;
                let bit = i * bits;
                let shift = bit % 8;
                let mask = (((1u16 << bits) - 1) as u8) << shift;
                let b = &mut d[bit / 8];
                *b = (*b & !mask) | (((raw as u8) << shift) & mask);
            }
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.pixel_type.decode(self.get_raw(i))
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        let raw = self.pixel_type.encode(v);
        self.set_raw(i, raw);
    }
}
