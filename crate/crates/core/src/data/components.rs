use super::{index, MaskVolume};

/// One 26-connected foreground component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub dims: [usize; 3],
    /// Linear voxel indices in ascending order.
    pub voxels: Vec<usize>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn mask(&self) -> MaskVolume {
        let mut m = MaskVolume::empty(self.dims);
        for &i in &self.voxels {
            m.data[i] = 1;
        }
        m
    }
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let up = parent[parent[a as usize] as usize];
        parent[a as usize] = up;
        a = up;
    }
    a
}

/// Two-pass union-find labeling. Returns per-voxel labels (0 = background,
/// components numbered from 1 in raster order of their first voxel) and the
/// label count.
pub fn label_components(m: &MaskVolume) -> (Vec<u32>, usize) {
    let [nx, ny, nz] = m.dims;
    let mut labels = vec![0u32; m.data.len()];
    let mut parent: Vec<u32> = vec![0];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let i = index(m.dims, x, y, z);
                if m.data[i] == 0 {
                    continue;
                }
                let mut label = 0u32;
                // The 13 neighbours preceding (x, y, z) in raster order.
                for dx in -1i64..=0 {
                    for dy in -1i64..=1 {
                        for dz in -1i64..=1 {
                            if dx == 0 && (dy > 0 || (dy == 0 && dz >= 0)) {
                                continue;
                            }
                            let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if qx < 0 || qy < 0 || qz < 0 || qy >= ny as i64 || qz >= nz as i64 {
                                continue;
                            }
                            let l = labels[index(m.dims, qx as usize, qy as usize, qz as usize)];
                            if l == 0 {
                                continue;
                            }
                            if label == 0 {
                                label = find(&mut parent, l);
                            } else {
                                let (a, b) = (find(&mut parent, label), find(&mut parent, l));
                                if a != b {
                                    let (lo, hi) = (a.min(b), a.max(b));
                                    parent[hi as usize] = lo;
                                    label = lo;
                                }
                            }
                        }
                    }
                }
                if label == 0 {
                    label = parent.len() as u32;
                    parent.push(label);
                }
                labels[i] = label;
            }
        }
    }
    let mut remap = vec![0u32; parent.len()];
    let mut next = 0u32;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        *l = remap[root];
    }
    (labels, next as usize)
}

/// 26-connected components with at least `min_size` voxels, largest first
/// (ties broken by first voxel).
pub fn connected_components_3d(m: &MaskVolume, min_size: usize) -> Vec<Component> {
    let (labels, count) = label_components(m);
    let mut voxels: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            voxels[l as usize - 1].push(i);
        }
    }
    let mut out: Vec<Component> = voxels.into_iter().filter(|v| v.len() >= min_size).map(|voxels| Component { dims: m.dims, voxels }).collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a.voxels[0].cmp(&b.voxels[0])));
    out
}
