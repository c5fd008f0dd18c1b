//! The 348-byte NIfTI-1 header and its byte layout.

use crate::{Error, Result};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag of a single-file volume.
pub const SINGLE_FILE_DATA_OFFSET: usize = 352;
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Voxel encodings this reader decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::U8 => 8,
            Datatype::I16 => 16,
            Datatype::I32 | Datatype::F32 => 32,
            Datatype::F64 => 64,
        }
    }

    pub fn size(self) -> usize {
        self.bitpix() as usize / 8
    }
}

/// NIfTI-1 header fields. Orientation (qform/sform) is carried but never
/// applied; slicing works in stored index space.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim_info: u8,
    pub dim: [i16; 8],
    pub intent_p: [f32; 3],
    pub intent_code: i16,
    pub datatype: i16,
    pub bitpix: i16,
    pub slice_start: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub slice_end: i16,
    pub slice_code: u8,
    pub xyzt_units: u8,
    pub cal_max: f32,
    pub cal_min: f32,
    pub slice_duration: f32,
    pub toffset: f32,
    pub descrip: [u8; 80],
    pub aux_file: [u8; 24],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub intent_name: [u8; 16],
    pub magic: [u8; 4],
    /// Byte order the header was read in (writes are always little-endian).
    pub endian: Endian,
}

impl Default for NiftiHeader {
    fn default() -> Self {
        NiftiHeader {
            sizeof_hdr: HEADER_SIZE as i32,
            dim_info: 0,
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            intent_p: [0.0; 3],
            intent_code: 0,
            datatype: Datatype::F64.code(),
            bitpix: Datatype::F64.bitpix(),
            slice_start: 0,
            pixdim: [1.0; 8],
            vox_offset: SINGLE_FILE_DATA_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            slice_end: 0,
            slice_code: 0,
            xyzt_units: 2, // millimetres
            cal_max: 0.0,
            cal_min: 0.0,
            slice_duration: 0.0,
            toffset: 0.0,
            descrip: [0; 80],
            aux_file: [0; 24],
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow_x: [0.0; 4],
            srow_y: [0.0; 4],
            srow_z: [0.0; 4],
            intent_name: [0; 16],
            magic: MAGIC_SINGLE,
            endian: Endian::Little,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut a: [u8; N] = self.bytes[off..off + N].try_into().unwrap();
        if self.endian == Endian::Big {
            a.reverse();
        }
        a
    }
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.arr(off))
    }
    fn i32(&self, off: usize) -> i32 {
        i32::from_le_bytes(self.arr(off))
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.arr(off))
    }
    fn f32s<const N: usize>(&self, off: usize) -> [f32; N] {
        std::array::from_fn(|i| self.f32(off + 4 * i))
    }
    fn raw<const N: usize>(&self, off: usize) -> [u8; N] {
        self.bytes[off..off + N].try_into().unwrap()
    }
}

fn detect_endian(bytes: &[u8]) -> Result<Endian> {
    let raw: [u8; 4] = bytes[0..4].try_into().unwrap();
    let le = i32::from_le_bytes(raw);
    let be = i32::from_be_bytes(raw);
    match (le, be) {
        (348, _) => Ok(Endian::Little),
        (_, 348) => Ok(Endian::Big),
        (540, _) | (_, 540) => Err(Error::Format(
            "NIfTI-2 header (sizeof_hdr 540) is not supported; only NIfTI-1 is".into(),
        )),
        _ => Err(Error::Format(format!(
            "sizeof_hdr is {le} (little-endian) / {be} (big-endian), expected 348"
        ))),
    }
}

impl NiftiHeader {
    /// Parses and validates a header, detecting byte order from `sizeof_hdr`.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::Truncated {
                expected: HEADER_SIZE,
                actual: bytes.len(),
            });
        }
        let endian = detect_endian(bytes)?;
        let r = Reader { bytes, endian };
        let h = NiftiHeader {
            sizeof_hdr: r.i32(0),
            dim_info: bytes[39],
            dim: std::array::from_fn(|i| r.i16(40 + 2 * i)),
            intent_p: r.f32s(56),
            intent_code: r.i16(68),
            datatype: r.i16(70),
            bitpix: r.i16(72),
            slice_start: r.i16(74),
            pixdim: r.f32s(76),
            vox_offset: r.f32(108),
            scl_slope: r.f32(112),
            scl_inter: r.f32(116),
            slice_end: r.i16(120),
            slice_code: bytes[122],
            xyzt_units: bytes[123],
            cal_max: r.f32(124),
            cal_min: r.f32(128),
            slice_duration: r.f32(132),
            toffset: r.f32(136),
            descrip: r.raw(148),
            aux_file: r.raw(228),
            qform_code: r.i16(252),
            sform_code: r.i16(254),
            quatern: r.f32s(256),
            qoffset: r.f32s(268),
            srow_x: r.f32s(280),
            srow_y: r.f32s(296),
            srow_z: r.f32s(312),
            intent_name: r.raw(328),
            magic: r.raw(344),
            endian,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizeof_hdr != HEADER_SIZE as i32 {
            return Err(Error::Format(format!(
                "sizeof_hdr {} != 348",
                self.sizeof_hdr
            )));
        }
        if self.magic != MAGIC_SINGLE && self.magic != MAGIC_PAIR {
            return Err(Error::Format(format!(
                "bad magic {:?}; expected \"n+1\\0\" or \"ni1\\0\"",
                String::from_utf8_lossy(&self.magic)
            )));
        }
        let rank = self.dim[0];
        if !(1..=7).contains(&rank) {
            return Err(Error::Format(format!("dim[0] = {rank} outside 1..=7")));
        }
        if let Some(bad) = self.dim[1..=rank as usize].iter().find(|&&d| d < 1) {
            return Err(Error::Format(format!(
                "dimension size {bad} < 1 in {:?}",
                self.dim
            )));
        }
        let dt = Datatype::from_code(self.datatype)?;
        if dt.bitpix() != self.bitpix {
            return Err(Error::Format(format!(
                "bitpix {} inconsistent with datatype {} (expects {})",
                self.bitpix,
                self.datatype,
                dt.bitpix()
            )));
        }
        Ok(())
    }

    pub fn datatype(&self) -> Result<Datatype> {
        Datatype::from_code(self.datatype)
    }

    /// Sizes of the first three axes; axes beyond `dim[0]` count as 1.
    pub fn spatial_dims(&self) -> [usize; 3] {
        let rank = self.dim[0].clamp(0, 7) as usize;
        std::array::from_fn(|i| {
            if i < rank {
                self.dim[i + 1] as usize
            } else {
                1
            }
        })
    }

    /// Number of 3D frames stored (product of dims 4..=rank).
    pub fn frame_count(&self) -> usize {
        let rank = self.dim[0].clamp(0, 7) as usize;
        (4..=rank).map(|i| self.dim[i] as usize).product()
    }

    pub fn is_single_file(&self) -> bool {
        self.magic == MAGIC_SINGLE
    }

    /// Effective scale slope; a stored 0 means "no scaling".
    pub fn slope(&self) -> f64 {
        if self.scl_slope == 0.0 || !self.scl_slope.is_finite() {
            1.0
        } else {
            self.scl_slope as f64
        }
    }

    pub fn intercept(&self) -> f64 {
        if self.scl_inter.is_finite() {
            self.scl_inter as f64
        } else {
            0.0
        }
    }

    pub fn description(&self) -> String {
        let end = self.descrip.iter().position(|&b| b == 0).unwrap_or(80);
        String::from_utf8_lossy(&self.descrip[..end]).into_owned()
    }

    pub fn set_description(&mut self, text: &str) {
        self.descrip = [0; 80];
        let b = text.as_bytes();
        let n = b.len().min(79);
        self.descrip[..n].copy_from_slice(&b[..n]);
    }

    /// Little-endian 348-byte encoding.
    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        let mut put = |off: usize, bytes: &[u8]| b[off..off + bytes.len()].copy_from_slice(bytes);
        put(0, &self.sizeof_hdr.to_le_bytes());
        put(39, &[self.dim_info]);
        for (i, d) in self.dim.iter().enumerate() {
            put(40 + 2 * i, &d.to_le_bytes());
        }
        for (i, v) in self.intent_p.iter().enumerate() {
            put(56 + 4 * i, &v.to_le_bytes());
        }
        put(68, &self.intent_code.to_le_bytes());
        put(70, &self.datatype.to_le_bytes());
        put(72, &self.bitpix.to_le_bytes());
        put(74, &self.slice_start.to_le_bytes());
        for (i, v) in self.pixdim.iter().enumerate() {
            put(76 + 4 * i, &v.to_le_bytes());
        }
        put(108, &self.vox_offset.to_le_bytes());
        put(112, &self.scl_slope.to_le_bytes());
        put(116, &self.scl_inter.to_le_bytes());
        put(120, &self.slice_end.to_le_bytes());
        put(122, &[self.slice_code, self.xyzt_units]);
        put(124, &self.cal_max.to_le_bytes());
        put(128, &self.cal_min.to_le_bytes());
        put(132, &self.slice_duration.to_le_bytes());
        put(136, &self.toffset.to_le_bytes());
        put(148, &self.descrip);
        put(228, &self.aux_file);
        put(252, &self.qform_code.to_le_bytes());
        put(254, &self.sform_code.to_le_bytes());
        let quads = [
            (256, &self.quatern[..]),
            (268, &self.qoffset[..]),
            (280, &self.srow_x[..]),
            (296, &self.srow_y[..]),
            (312, &self.srow_z[..]),
        ];
        for (base, vals) in quads {
            for (i, v) in vals.iter().enumerate() {
                put(base + 4 * i, &v.to_le_bytes());
            }
        }
        put(328, &self.intent_name);
        put(344, &self.magic);
        b
    }
}
