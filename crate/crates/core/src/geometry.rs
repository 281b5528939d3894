//! Points, axis-aligned boxes and the IoU primitives shared by every module.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// A point or direction in scene coordinates, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        (*self - *other).norm()
    }

    pub fn min(&self, other: &Vec3) -> Vec3 {
        Vec3::new(self.x.min(other.x), self.y.min(other.y), self.z.min(other.z))
    }

    pub fn max(&self, other: &Vec3) -> Vec3 {
        Vec3::new(self.x.max(other.x), self.y.max(other.y), self.z.max(other.z))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// World-axis-aligned box with inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: Vec3,
    pub max: Vec3,
}

impl Box3 {
    /// Builds a box, rejecting inverted or non-finite corners.
    pub fn new(min: Vec3, max: Vec3) -> Option<Self> {
        let ok = min.is_finite()
            && max.is_finite()
            && min.x <= max.x
            && min.y <= max.y
            && min.z <= max.z;
        ok.then_some(Self { min, max })
    }

    pub fn is_valid(&self) -> bool {
        Box3::new(self.min, self.max).is_some()
    }

    pub fn point(p: Vec3) -> Self {
        Self { min: p, max: p }
    }

    /// Tight box around a non-empty set of points.
    pub fn enclosing<'a, I>(points: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Vec3>,
    {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut bbox = Box3::point(first);
        for p in iter {
            bbox.min = bbox.min.min(p);
            bbox.max = bbox.max.max(p);
        }
        Some(bbox)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    /// Area of the projection onto the horizontal plane.
    pub fn footprint_area(&self) -> f64 {
        let e = self.extent();
        e.x * e.y
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn intersection(&self, other: &Box3) -> Option<Box3> {
        Box3::new(self.min.max(&other.min), self.max.min(&other.max))
    }

    /// Horizontal (x/y) overlap area of the two footprints.
    pub fn footprint_overlap(&self, other: &Box3) -> f64 {
        let dx = self.max.x.min(other.max.x) - self.min.x.max(other.min.x);
        let dy = self.max.y.min(other.max.y) - self.min.y.max(other.min.y);
        if dx <= 0.0 || dy <= 0.0 {
            0.0
        } else {
            dx * dy
        }
    }
}

/// Volumetric IoU of two boxes.
///
/// Zero-volume boxes score 0 against everything except an identical
/// zero-volume box, which scores 1.
pub fn box_iou(a: &Box3, b: &Box3) -> f64 {
    let va = a.volume();
    let vb = b.volume();
    if va <= 0.0 || vb <= 0.0 {
        return if va <= 0.0 && vb <= 0.0 && a == b { 1.0 } else { 0.0 };
    }
    let inter = a.intersection(b).map_or(0.0, |i| i.volume());
    let union = va + vb - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Size of the intersection of two sorted, duplicate-free index lists.
pub fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Point-set IoU on sorted, duplicate-free index lists. Two empty sets score 0.
pub fn mask_iou(a: &[usize], b: &[usize]) -> f64 {
    let inter = sorted_intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(a: [f64; 3], b: [f64; 3]) -> Box3 {
        Box3::new(a.into(), b.into()).unwrap()
    }

    /// Counts voxel centers of a regular grid lying in each box.
    fn voxel_iou(a: &Box3, b: &Box3, lo: f64, hi: f64, n: usize) -> f64 {
        let step = (hi - lo) / n as f64;
        let (mut inter, mut union) = (0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let p = Vec3::new(
                        lo + (i as f64 + 0.5) * step,
                        lo + (j as f64 + 0.5) * step,
                        lo + (k as f64 + 0.5) * step,
                    );
                    let (ia, ib) = (a.contains(&p), b.contains(&p));
                    inter += (ia && ib) as u64;
                    union += (ia || ib) as u64;
                }
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn self_iou_is_one() {
        let a = bx([0.0, 0.0, 0.0], [1.0, 2.0, 3.0]);
        assert_eq!(box_iou(&a, &a), 1.0);
    }

    #[test]
    fn disjoint_iou_is_zero() {
        let a = bx([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let b = bx([2.0, 2.0, 2.0], [3.0, 3.0, 3.0]);
        assert_eq!(box_iou(&a, &b), 0.0);
    }

    #[test]
    fn offset_cubes_match_voxel_count() {
        let a = bx([0.0, 0.0, 0.0], [2.0, 2.0, 2.0]);
        let b = bx([1.0, 1.0, 1.0], [3.0, 3.0, 3.0]);
        let oracle = voxel_iou(&a, &b, 0.0, 3.0, 60);
        assert!((oracle - 1.0 / 15.0).abs() < 1e-12);
        assert!((box_iou(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes() {
        let p = Box3::point(Vec3::new(1.0, 1.0, 1.0));
        let flat = bx([0.0, 0.0, 0.0], [1.0, 1.0, 0.0]);
        let solid = bx([0.0, 0.0, 0.0], [2.0, 2.0, 2.0]);
        assert_eq!(box_iou(&p, &p), 1.0);
        assert_eq!(box_iou(&flat, &flat), 1.0);
        assert_eq!(box_iou(&p, &solid), 0.0);
        assert_eq!(box_iou(&flat, &p), 0.0);
    }

    #[test]
    fn mask_iou_cases() {
        assert_eq!(mask_iou(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(mask_iou(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(mask_iou(&[], &[]), 0.0);
        // |a|=4, |b|=4, |a∩b|=2 -> 2/6
        let a = [0, 1, 2, 3];
        let b = [2, 3, 4, 5];
        let inter = a.iter().filter(|x| b.contains(x)).count();
        let union = a.len() + b.len() - inter;
        assert_eq!(mask_iou(&a, &b), inter as f64 / union as f64);
        assert!((mask_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn inverted_box_rejected() {
        assert!(Box3::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 1.0)).is_none());
        assert!(Box3::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::new(0.0, 1.0, 1.0)).is_none());
    }
}
