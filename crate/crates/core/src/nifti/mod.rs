//! NIfTI-1 volumes: parsing (either byte order), writing (little-endian,
//! single file, float64) and plane extraction.
//!
//! Voxels are held as a `[X, Y, Z]` tensor after applying
//! `scl_slope`/`scl_inter`. On disk NIfTI stores `x` fastest, so reading and
//! writing transpose between the two layouts.

mod header;

pub use header::{
    Datatype, Endian, NiftiHeader, HEADER_SIZE, MAGIC_PAIR, MAGIC_SINGLE, SINGLE_FILE_DATA_OFFSET,
};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Anatomical slicing plane, each fixing one axis of the stored grid.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum Plane {
    /// Fixes Z.
    Axial,
    /// Fixes Y.
    Coronal,
    /// Fixes X.
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    /// Index of the stored axis this plane holds fixed.
    pub fn fixed_axis(self) -> usize {
        match self {
            Plane::Sagittal => 0,
            Plane::Coronal => 1,
            Plane::Axial => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "axial" | "transversal" | "transverse" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            other => Err(Error::Config(format!("unknown plane `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub header: NiftiHeader,
    voxels: Tensor,
}

impl NiftiVolume {
    pub fn new(header: NiftiHeader, voxels: Tensor) -> Result<Self> {
        if voxels.rank() != 3 || voxels.shape() != header.spatial_dims() {
            return Err(Error::Shape(format!(
                "voxel tensor {:?} does not match header dims {:?}",
                voxels.shape(),
                header.spatial_dims()
            )));
        }
        if !voxels.is_finite() {
            return Err(Error::Data("volume contains non-finite voxels".into()));
        }
        Ok(NiftiVolume { header, voxels })
    }

    /// Wraps an `[X, Y, Z]` tensor in a fresh float64 header with the given
    /// voxel spacing (mm).
    pub fn from_voxels(voxels: Tensor, spacing: [f32; 3]) -> Result<Self> {
        voxels.expect_rank(3, "volume")?;
        let mut header = NiftiHeader::default();
        for (i, &d) in voxels.shape().iter().enumerate() {
            header.dim[i + 1] = i16::try_from(d)
                .map_err(|_| Error::Shape(format!("axis size {d} exceeds NIfTI-1 limit")))?;
            header.pixdim[i + 1] = spacing[i];
        }
        NiftiVolume::new(header, voxels)
    }

    pub fn voxels(&self) -> &Tensor {
        &self.voxels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.voxels.shape().try_into().unwrap()
    }

    /// Replaces the voxel data, keeping the header.
    pub fn with_voxels(&self, voxels: Tensor) -> Result<Self> {
        NiftiVolume::new(self.header.clone(), voxels)
    }
}

/// Parses a single-file (`n+1`) NIfTI-1 image.
pub fn read_nifti(bytes: &[u8]) -> Result<NiftiVolume> {
    let header = NiftiHeader::parse(bytes)?;
    if !header.is_single_file() {
        return Err(Error::Format(
            "header-only (ni1) file: voxel data lives in a separate .img, use read_nifti_pair"
                .into(),
        ));
    }
    if bytes.len() < SINGLE_FILE_DATA_OFFSET {
        return Err(Error::Truncated {
            expected: SINGLE_FILE_DATA_OFFSET,
            actual: bytes.len(),
        });
    }
    let offset = header.vox_offset;
    if !(offset >= SINGLE_FILE_DATA_OFFSET as f32) || offset.fract() != 0.0 {
        return Err(Error::Format(format!(
            "vox_offset {offset} must be a whole number >= 352"
        )));
    }
    decode(header, bytes, offset as usize)
}

/// Parses a two-file (`ni1`) pair: `.hdr` bytes plus `.img` bytes.
pub fn read_nifti_pair(hdr: &[u8], img: &[u8]) -> Result<NiftiVolume> {
    let header = NiftiHeader::parse(hdr)?;
    if header.is_single_file() {
        return Err(Error::Format(
            "expected ni1 magic for a header/image pair".into(),
        ));
    }
    let offset = header.vox_offset.max(0.0) as usize;
    decode(header, img, offset)
}

fn decode(header: NiftiHeader, bytes: &[u8], offset: usize) -> Result<NiftiVolume> {
    let dt = header.datatype()?;
    let [nx, ny, nz] = header.spatial_dims();
    if header.frame_count() > 1 {
        log::warn!(
            "volume has {} frames; only the first 3D frame is used",
            header.frame_count()
        );
    }
    let count = nx * ny * nz;
    let expected = offset + count * dt.size();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let raw = &bytes[offset..expected];
    let big = header.endian == Endian::Big;
    let slope = header.slope();
    let inter = header.intercept();

    let stored = |i: usize| -> f64 {
        let s = &raw[i * dt.size()..(i + 1) * dt.size()];
        macro_rules! num {
            ($t:ty) => {{
                let a = s.try_into().unwrap();
                (if big {
                    <$t>::from_be_bytes(a)
                } else {
                    <$t>::from_le_bytes(a)
                }) as f64
            }};
        }
        match dt {
            Datatype::U8 => s[0] as f64,
            Datatype::I16 => num!(i16),
            Datatype::I32 => num!(i32),
            Datatype::F32 => num!(f32),
            Datatype::F64 => num!(f64),
        }
    };

    let mut data = vec![0.0; count];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = stored(x + nx * (y + ny * z)) * slope + inter;
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite voxel at ({x}, {y}, {z})")));
                }
                data[(x * ny + y) * nz + z] = v;
            }
        }
    }
    let voxels = Tensor::new(vec![nx, ny, nz], data)?;
    Ok(NiftiVolume { header, voxels })
}

/// Serializes as a little-endian single-file NIfTI-1 image with float64
/// voxels, data at offset 352 after four zero extension bytes.
pub fn write_nifti(volume: &NiftiVolume) -> Vec<u8> {
    let [nx, ny, nz] = volume.dims();
    let mut h = volume.header.clone();
    h.sizeof_hdr = HEADER_SIZE as i32;
    h.dim = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    h.datatype = Datatype::F64.code();
    h.bitpix = Datatype::F64.bitpix();
    h.vox_offset = SINGLE_FILE_DATA_OFFSET as f32;
    h.scl_slope = 1.0;
    h.scl_inter = 0.0;
    h.magic = MAGIC_SINGLE;

    let mut out = Vec::with_capacity(SINGLE_FILE_DATA_OFFSET + 8 * nx * ny * nz);
    out.extend_from_slice(&h.to_bytes());
    out.extend_from_slice(&[0, 0, 0, 0]);
    let v = volume.voxels.data();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.extend_from_slice(&v[(x * ny + y) * nz + z].to_le_bytes());
            }
        }
    }
    out
}

/// Copies out the 2D slice at `index` along `plane`'s fixed axis. The two
/// remaining axes keep their stored order: axial → `[X, Y]`,
/// coronal → `[X, Z]`, sagittal → `[Y, Z]`.
pub fn extract_plane(volume: &NiftiVolume, plane: Plane, index: usize) -> Result<Tensor> {
    let [nx, ny, nz] = volume.dims();
    let axis = plane.fixed_axis();
    let extent = [nx, ny, nz][axis];
    if index >= extent {
        return Err(Error::IndexOutOfRange {
            index,
            extent,
            context: "plane index",
        });
    }
    let v = volume.voxels.data();
    let at = |x: usize, y: usize, z: usize| v[(x * ny + y) * nz + z];
    let (shape, data): (Vec<usize>, Vec<f64>) = match plane {
        Plane::Sagittal => (
            vec![ny, nz],
            (0..ny)
                .flat_map(|y| (0..nz).map(move |z| (y, z)))
                .map(|(y, z)| at(index, y, z))
                .collect(),
        ),
        Plane::Coronal => (
            vec![nx, nz],
            (0..nx)
                .flat_map(|x| (0..nz).map(move |z| (x, z)))
                .map(|(x, z)| at(x, index, z))
                .collect(),
        ),
        Plane::Axial => (
            vec![nx, ny],
            (0..nx)
                .flat_map(|x| (0..ny).map(move |y| (x, y)))
                .map(|(x, y)| at(x, y, index))
                .collect(),
        ),
    };
    Tensor::new(shape, data)
}

/// Extent of the stored grid along `plane`'s fixed axis.
pub fn plane_extent(volume: &NiftiVolume, plane: Plane) -> usize {
    volume.dims()[plane.fixed_axis()]
}
