use crate::data::{erase_tumor, resample_cube, CropBox, IntensityDomain, MaskVolume, Volume};
use crate::error::{Error, Result};
use crate::model::Generator;
use crate::tensor::{no_grad, Scalar};

/// Original voxels outside `mask`, `generated` inside.
pub fn composite_cube(original: &Volume, generated: &Volume, mask: &MaskVolume) -> Result<Volume> {
    if original.dims != generated.dims || original.dims != mask.dims {
        return Err(Error::dim("composite", None, format!("{:?}, {:?}, {:?}", original.dims, generated.dims, mask.dims)));
    }
    let data = original.data.iter().zip(&generated.data).zip(&mask.data).map(|((&o, &g), &m)| if m == 1 { g.clamp(0.0, 1.0) } else { o }).collect();
    Ok(Volume { data, ..original.clone() })
}

/// Runs the generator on a `side^3` cube erased under `mask` and composites
/// the result into the cube.
pub fn synthesize_cube<S: Scalar>(gen: &Generator<S>, y: &Volume, mask: &MaskVolume) -> Result<Volume> {
    let side = gen.config.side;
    if y.dims != [side; 3] {
        return Err(Error::dim("synthesize", None, format!("cube extents {:?}, generator expects {side}^3", y.dims)));
    }
    let x = erase_tumor(y, mask)?;
    let _g = no_grad();
    let out = gen.forward(&x.to_tensor::<S>(), &mask.to_volume().to_tensor::<S>())?;
    let generated = Volume::from_tensor(&out.image, IntensityDomain::Normalized)?;
    composite_cube(y, &generated, mask)
}

/// Fills the user mask in a normalized volume of any extent: the padded
/// bounding box of the mask is resampled to the generator's cube, inpainted,
/// resampled back, and composited inside the mask only.
pub fn synthesize<S: Scalar>(gen: &Generator<S>, volume: &Volume, mask: &MaskVolume, pad: usize) -> Result<Volume> {
    if volume.dims != mask.dims {
        return Err(Error::dim("synthesize", None, format!("volume {:?} vs mask {:?}", volume.dims, mask.dims)));
    }
    let b = CropBox::around(mask, pad).ok_or_else(|| Error::arg("synthesize", "mask is empty"))?;
    let side = gen.config.side;
    let (img, m) = (b.crop_volume(volume), b.crop_mask(mask));
    let (cube, cube_mask) = resample_cube(&Volume { domain: IntensityDomain::Normalized, ..img.clone() }, &m, [side; 3])?;
    let x = erase_tumor(&cube, &cube_mask)?;
    let generated = {
        let _g = no_grad();
        let out = gen.forward(&x.to_tensor::<S>(), &cube_mask.to_volume().to_tensor::<S>())?;
        Volume::from_tensor(&out.image, IntensityDomain::Normalized)?
    };
    let (back, _) = resample_cube(&generated, &MaskVolume::empty([side; 3]), img.dims)?;
    let patch = composite_cube(&img, &back, &m)?;
    let mut result = volume.clone();
    b.paste(&mut result, &patch);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::index;
    use crate::model::GeneratorConfig;

    fn gen() -> Generator<f32> {
        Generator::new(GeneratorConfig { side: 8, width: 2 }, 4).unwrap()
    }

    fn scene() -> (Volume, MaskVolume) {
        let d = [20, 18, 16];
        let data = (0..d.iter().product::<usize>()).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        let v = Volume::new(d, data, IntensityDomain::Normalized).unwrap();
        let mut m = MaskVolume::empty(d);
        for x in 8..12 {
            for y in 6..9 {
                for z in 5..10 {
                    m.data[index(d, x, y, z)] = 1;
                }
            }
        }
        (v, m)
    }

    #[test]
    fn only_masked_voxels_change() {
        let (v, m) = scene();
        let out = synthesize(&gen(), &v, &m, 3).unwrap();
        let mut changed = 0;
        for i in 0..v.len() {
            if m.data[i] == 0 {
                assert_eq!(out.data[i].to_bits(), v.data[i].to_bits());
            } else {
                changed += usize::from(out.data[i] != v.data[i]);
            }
            assert!((0.0..=1.0).contains(&out.data[i]));
        }
        assert!(changed > 0);
    }

    #[test]
    fn compositing_is_idempotent_outside_the_mask() {
        let (v, m) = scene();
        let once = synthesize(&gen(), &v, &m, 3).unwrap();
        let twice = synthesize(&gen(), &once, &m, 3).unwrap();
        for i in (0..v.len()).filter(|&i| m.data[i] == 0) {
            assert_eq!(twice.data[i], v.data[i]);
        }
    }

    #[test]
    fn empty_mask_is_rejected() {
        let (v, _) = scene();
        let e = synthesize(&gen(), &v, &MaskVolume::empty(v.dims), 3);
        assert!(matches!(e, Err(Error::Argument { .. })));
    }
}
