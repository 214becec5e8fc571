//! Finite boxes of Z^d and operations on site sets.
//!
//! Sites of a box are addressed by their row-major index (last coordinate
//! fastest). Every [`SiteSet`] is a sorted, duplicate-free list of such
//! indices, so set order coincides with lexicographic order of coordinates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const MAX_DIM: usize = 4;
const NONE: usize = usize::MAX;

/// A point of Z^d; unused trailing coordinates are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub [i32; MAX_DIM]);

impl Site {
    pub fn new(coords: &[i32]) -> Self {
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    pub fn l1(&self, other: &Site) -> u32 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a.abs_diff(*b)).sum()
    }

    pub fn offset(&self, k: usize, step: i32) -> Site {
        let mut c = self.0;
        c[k] += step;
        Site(c)
    }
}

/// An axis-parallel box `origin + [0, extents)` in Z^d.
#[derive(Clone, Debug)]
pub struct LatticeVolume {
    dim: usize,
    origin: [i32; MAX_DIM],
    extents: [usize; MAX_DIM],
    strides: [usize; MAX_DIM],
    len: usize,
    // 2d slots per site: direction k backwards, then forwards; NONE if outside.
    nbrs: Vec<usize>,
}

impl LatticeVolume {
    pub fn new(extents: &[usize]) -> Result<Self> {
        Self::with_origin(extents, &vec![0; extents.len()])
    }

    pub fn cube(dim: usize, side: usize) -> Result<Self> {
        Self::new(&vec![side; dim])
    }

    pub fn chain(n: usize) -> Result<Self> {
        Self::new(&[n])
    }

    /// Box of half-width `radius` centred at the origin.
    pub fn centered(dim: usize, radius: usize) -> Result<Self> {
        let r = radius as i32;
        Self::with_origin(&vec![2 * radius + 1; dim], &vec![-r; dim])
    }

    pub fn with_origin(extents: &[usize], origin: &[i32]) -> Result<Self> {
        let dim = extents.len();
        if dim == 0 || dim > MAX_DIM {
            return domain(format!("dimension must be in 1..={MAX_DIM}, got {dim}"));
        }
        if origin.len() != dim {
            return domain("origin and extents differ in dimension");
        }
        if extents.contains(&0) {
            return domain("box extents must be positive");
        }
        let mut ext = [1; MAX_DIM];
        ext[..dim].copy_from_slice(extents);
        let mut org = [0; MAX_DIM];
        org[..dim].copy_from_slice(origin);
        let mut strides = [0; MAX_DIM];
        let mut s = 1;
        for k in (0..dim).rev() {
            strides[k] = s;
            s *= ext[k];
        }
        let len = s;
        let mut nbrs = vec![NONE; len * 2 * dim];
        for i in 0..len {
            for k in 0..dim {
                let xk = (i / strides[k]) % ext[k];
                if xk > 0 {
                    nbrs[i * 2 * dim + 2 * k] = i - strides[k];
                }
                if xk + 1 < ext[k] {
                    nbrs[i * 2 * dim + 2 * k + 1] = i + strides[k];
                }
            }
        }
        Ok(LatticeVolume { dim, origin: org, extents: ext, strides, len, nbrs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents[..self.dim]
    }

    pub fn all(&self) -> SiteSet {
        SiteSet((0..self.len).collect())
    }

    pub fn site(&self, i: usize) -> Site {
        let mut c = [0; MAX_DIM];
        for k in 0..self.dim {
            c[k] = self.origin[k] + ((i / self.strides[k]) % self.extents[k]) as i32;
        }
        Site(c)
    }

    pub fn index(&self, s: &Site) -> Option<usize> {
        let mut i = 0;
        for k in 0..self.dim {
            let x = s.0[k] - self.origin[k];
            if x < 0 || x as usize >= self.extents[k] {
                return None;
            }
            i += x as usize * self.strides[k];
        }
        if s.0[self.dim..].iter().any(|&x| x != 0) {
            return None;
        }
        Some(i)
    }

    /// In-box nearest neighbours of site `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.nbrs[i * 2 * self.dim..(i + 1) * 2 * self.dim]
            .iter()
            .copied()
            .filter(|&j| j != NONE)
    }

    /// All 2d ambient neighbours of `i` as points of Z^d.
    pub fn ambient_neighbors(&self, i: usize) -> Vec<Site> {
        let s = self.site(i);
        (0..self.dim).flat_map(|k| [s.offset(k, -1), s.offset(k, 1)]).collect()
    }

    /// Number of ambient neighbours of `i` lying outside the box.
    pub fn exterior_degree(&self, i: usize) -> usize {
        self.nbrs[i * 2 * self.dim..(i + 1) * 2 * self.dim].iter().filter(|&&j| j == NONE).count()
    }

    /// Out-of-box neighbours of `i`.
    pub fn exterior_neighbors(&self, i: usize) -> Vec<Site> {
        let s = self.site(i);
        let mut out = Vec::new();
        for k in 0..self.dim {
            if self.nbrs[i * 2 * self.dim + 2 * k] == NONE {
                out.push(s.offset(k, -1));
            }
            if self.nbrs[i * 2 * self.dim + 2 * k + 1] == NONE {
                out.push(s.offset(k, 1));
            }
        }
        out
    }

    pub fn distance(&self, i: usize, j: usize) -> u32 {
        self.site(i).l1(&self.site(j))
    }

    /// 1-norm distance from `i` to the complement of the box.
    pub fn distance_to_exterior(&self, i: usize) -> u32 {
        let s = self.site(i);
        (0..self.dim)
            .map(|k| {
                let x = (s.0[k] - self.origin[k]) as u32;
                let hi = self.extents[k] as u32 - 1 - x;
                x.min(hi) + 1
            })
            .min()
            .unwrap_or(1)
    }

    pub fn set_distance(&self, a: &SiteSet, b: &SiteSet) -> Option<u32> {
        a.iter().flat_map(|x| b.iter().map(move |y| (x, y))).map(|(x, y)| self.distance(x, y)).min()
    }

    pub fn diameter(&self, s: &[usize]) -> u32 {
        let mut d = 0;
        for (n, &x) in s.iter().enumerate() {
            for &y in &s[n + 1..] {
                d = d.max(self.distance(x, y));
            }
        }
        d
    }
}

/// Sorted, duplicate-free set of site indices of some box.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteSet(Vec<usize>);

impl SiteSet {
    pub fn new(mut v: Vec<usize>) -> Self {
        v.sort_unstable();
        v.dedup();
        SiteSet(v)
    }

    pub fn empty() -> Self {
        SiteSet(Vec::new())
    }

    pub fn singleton(i: usize) -> Self {
        SiteSet(vec![i])
    }

    /// Members of `base` selected by the bits of `mask`.
    pub fn from_mask(base: &SiteSet, mask: u64) -> Self {
        SiteSet(base.0.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &x)| x).collect())
    }

    /// Bit mask of `self` relative to `base`; `None` if not a subset.
    pub fn mask_in(&self, base: &SiteSet) -> Option<u64> {
        let mut m = 0u64;
        for &x in &self.0 {
            m |= 1 << base.position(x)?;
        }
        Some(m)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.0.binary_search(&x).is_ok()
    }

    /// Position of `x` inside the sorted set.
    pub fn position(&self, x: usize) -> Option<usize> {
        self.0.binary_search(&x).ok()
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.0.iter().all(|&x| other.contains(x))
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        SiteSet::new(v)
    }

    pub fn intersection(&self, other: &SiteSet) -> SiteSet {
        SiteSet(self.0.iter().copied().filter(|&x| other.contains(x)).collect())
    }

    pub fn difference(&self, other: &SiteSet) -> SiteSet {
        SiteSet(self.0.iter().copied().filter(|&x| !other.contains(x)).collect())
    }

    pub fn min(&self) -> Option<usize> {
        self.0.first().copied()
    }
}

impl FromIterator<usize> for SiteSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        SiteSet::new(iter.into_iter().collect())
    }
}

fn check_box_set(lat: &LatticeVolume, g: &SiteSet) -> Result<()> {
    match g.0.last() {
        Some(&x) if x >= lat.len() => domain(format!("site index {x} outside a box of {} sites", lat.len())),
        _ => Ok(()),
    }
}

/// Sites of `universe \ g` adjacent to `g`.
pub fn outer_boundary(lat: &LatticeVolume, g: &SiteSet, universe: &SiteSet) -> Result<SiteSet> {
    check_box_set(lat, universe)?;
    if !g.is_subset(universe) {
        return domain("set is not contained in its universe");
    }
    Ok(g.iter().flat_map(|x| lat.neighbors(x)).filter(|&y| universe.contains(y) && !g.contains(y)).collect())
}

/// Points of Z^d outside `g` adjacent to `g`, including points outside the box.
pub fn ambient_boundary(lat: &LatticeVolume, g: &SiteSet) -> Result<Vec<Site>> {
    check_box_set(lat, g)?;
    let mut out: Vec<Site> = g
        .iter()
        .flat_map(|x| lat.ambient_neighbors(x))
        .filter(|s| lat.index(s).is_none_or(|j| !g.contains(j)))
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Whether a boundary is taken inside a universe or in the ambient lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryScope {
    Inside,
    Ambient,
}

/// Boundary of `g` as points of Z^d, for either scope.
pub fn boundary_sites(lat: &LatticeVolume, g: &SiteSet, universe: &SiteSet, scope: BoundaryScope) -> Result<Vec<Site>> {
    match scope {
        BoundaryScope::Inside => Ok(outer_boundary(lat, g, universe)?.iter().map(|i| lat.site(i)).collect()),
        BoundaryScope::Ambient => ambient_boundary(lat, g),
    }
}

/// Maximal nearest-neighbour connected subsets, ordered by smallest site.
pub fn connected_components(lat: &LatticeVolume, s: &SiteSet) -> Vec<SiteSet> {
    let mut seen = vec![false; s.len()];
    let mut comps = Vec::new();
    for start in 0..s.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![s.0[start]];
        let mut queue = VecDeque::from([s.0[start]]);
        while let Some(x) = queue.pop_front() {
            for y in lat.neighbors(x) {
                if let Some(p) = s.position(y) {
                    if !seen[p] {
                        seen[p] = true;
                        comp.push(y);
                        queue.push_back(y);
                    }
                }
            }
        }
        comps.push(SiteSet::new(comp));
    }
    comps
}

pub fn is_connected(lat: &LatticeVolume, s: &SiteSet) -> bool {
    s.len() <= 1 || connected_components(lat, s).len() == 1
}

/// Sites of the box within 1-norm distance `r` of `g`.
///
/// A box is convex for lattice paths, so breadth-first distance inside the
/// box equals the ambient 1-norm distance.
pub fn r_hull(lat: &LatticeVolume, g: &SiteSet, r: u32) -> Result<SiteSet> {
    check_box_set(lat, g)?;
    let mut dist = vec![u32::MAX; lat.len()];
    let mut queue = VecDeque::new();
    for x in g.iter() {
        dist[x] = 0;
        queue.push_back(x);
    }
    while let Some(x) = queue.pop_front() {
        if dist[x] == r {
            continue;
        }
        for y in lat.neighbors(x) {
            if dist[y] == u32::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    Ok((0..lat.len()).filter(|&x| dist[x] <= r).collect())
}

/// Local adjacency of the subgraph induced on `v`, in positions of `v`.
pub fn induced_adjacency(lat: &LatticeVolume, v: &SiteSet) -> Vec<Vec<usize>> {
    v.iter().map(|x| lat.neighbors(x).filter_map(|y| v.position(y)).collect()).collect()
}

/// Calls `visit` once for every nonempty connected subset of `within`
/// accepted by `accept`.
///
/// `accept` must be monotone: if it rejects a set it must reject every
/// superset. Subsets are passed as sorted site-index slices.
pub fn for_each_connected_subset(
    lat: &LatticeVolume,
    within: &SiteSet,
    mut accept: impl FnMut(&[usize]) -> bool,
    mut visit: impl FnMut(&[usize]),
) {
    let adj = induced_adjacency(lat, within);
    let n = within.len();
    let mut sub: Vec<usize> = Vec::new();
    let mut in_sub = vec![false; n];
    // Number of members of `sub` adjacent to each vertex.
    let mut touch = vec![0usize; n];

    #[allow(clippy::too_many_arguments)]
    fn extend(
        root: usize,
        ext: Vec<usize>,
        sub: &mut Vec<usize>,
        in_sub: &mut [bool],
        touch: &mut [usize],
        adj: &[Vec<usize>],
        within: &SiteSet,
        accept: &mut dyn FnMut(&[usize]) -> bool,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        let sites: Vec<usize> = {
            let mut s: Vec<usize> = sub.iter().map(|&p| within.0[p]).collect();
            s.sort_unstable();
            s
        };
        visit(&sites);
        let mut ext = ext;
        while let Some(w) = ext.pop() {
            let mut cand = sites.clone();
            cand.push(within.0[w]);
            cand.sort_unstable();
            if !accept(&cand) {
                continue;
            }
            let mut next = ext.clone();
            for &u in &adj[w] {
                if u > root && !in_sub[u] && touch[u] == 0 && !ext.contains(&u) {
                    next.push(u);
                }
            }
            sub.push(w);
            in_sub[w] = true;
            for &u in &adj[w] {
                touch[u] += 1;
            }
            extend(root, next, sub, in_sub, touch, adj, within, accept, visit);
            for &u in &adj[w] {
                touch[u] -= 1;
            }
            in_sub[w] = false;
            sub.pop();
        }
    }

    for root in 0..n {
        if !accept(&[within.0[root]]) {
            continue;
        }
        sub.push(root);
        in_sub[root] = true;
        for &u in &adj[root] {
            touch[u] += 1;
        }
        let ext: Vec<usize> = adj[root].iter().copied().filter(|&u| u > root).collect();
        extend(root, ext, &mut sub, &mut in_sub, &mut touch, &adj, within, &mut accept, &mut visit);
        for &u in &adj[root] {
            touch[u] -= 1;
        }
        in_sub[root] = false;
        sub.pop();
    }
}

/// Masks (relative to `v`) of all nonempty connected subsets of `v`.
pub fn connected_masks(lat: &LatticeVolume, v: &SiteSet) -> Result<Vec<u64>> {
    crate::error::cap("site set for subset enumeration", v.len(), 63)?;
    let mut out = Vec::new();
    for_each_connected_subset(lat, v, |_| true, |s| {
        out.push(SiteSet(s.to_vec()).mask_in(v).expect("subset"));
    });
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let lat = LatticeVolume::with_origin(&[3, 4, 2], &[-1, 0, 5]).unwrap();
        for i in 0..lat.len() {
            assert_eq!(lat.index(&lat.site(i)), Some(i));
        }
        assert_eq!(lat.site(0), Site::new(&[-1, 0, 5]));
        assert_eq!(lat.site(1), Site::new(&[-1, 0, 6]));
    }

    #[test]
    fn corner_of_square_has_two_exterior_neighbours() {
        let lat = LatticeVolume::cube(2, 3).unwrap();
        assert_eq!(lat.exterior_degree(0), 2);
        assert_eq!(lat.exterior_degree(4), 0);
        assert_eq!(lat.distance_to_exterior(4), 2);
    }

    #[test]
    fn boundary_of_center_site_in_cube() {
        let lat = LatticeVolume::cube(3, 3).unwrap();
        let center = lat.index(&Site::new(&[1, 1, 1])).unwrap();
        let g = SiteSet::singleton(center);
        assert_eq!(outer_boundary(&lat, &g, &lat.all()).unwrap().len(), 6);
        let corner = SiteSet::singleton(0);
        assert_eq!(outer_boundary(&lat, &corner, &lat.all()).unwrap().len(), 3);
        assert_eq!(ambient_boundary(&lat, &corner).unwrap().len(), 6);
    }

    #[test]
    fn boundary_rejects_foreign_set() {
        let lat = LatticeVolume::chain(5).unwrap();
        let g = SiteSet::new(vec![0, 4]);
        let u = SiteSet::new(vec![0, 1, 2]);
        assert!(outer_boundary(&lat, &g, &u).is_err());
    }

    #[test]
    fn components_of_split_chain() {
        let lat = LatticeVolume::chain(7).unwrap();
        let s = SiteSet::new(vec![5, 0, 1, 3, 6]);
        let comps = connected_components(&lat, &s);
        assert_eq!(comps, vec![SiteSet::new(vec![0, 1]), SiteSet::new(vec![3]), SiteSet::new(vec![5, 6])]);
    }

    #[test]
    fn hull_of_center_is_ball() {
        let lat = LatticeVolume::cube(3, 5).unwrap();
        let c = lat.index(&Site::new(&[2, 2, 2])).unwrap();
        assert_eq!(r_hull(&lat, &SiteSet::singleton(c), 2).unwrap().len(), 25);
        assert_eq!(r_hull(&lat, &SiteSet::singleton(c), 0).unwrap().len(), 1);
    }

    #[test]
    fn connected_subsets_of_small_grids() {
        // Connected induced subgraphs: path P4 has 10, 2x2 square has 13.
        let chain = LatticeVolume::chain(4).unwrap();
        assert_eq!(connected_masks(&chain, &chain.all()).unwrap().len(), 10);
        let sq = LatticeVolume::cube(2, 2).unwrap();
        assert_eq!(connected_masks(&sq, &sq.all()).unwrap().len(), 13);
    }

    #[test]
    fn connected_subsets_match_brute_force() {
        let lat = LatticeVolume::new(&[3, 3]).unwrap();
        let all = lat.all();
        let found = connected_masks(&lat, &all).unwrap();
        let brute: Vec<u64> =
            (1u64..1 << 9).filter(|&m| is_connected(&lat, &SiteSet::from_mask(&all, m))).collect();
        assert_eq!(found, brute);
    }

    #[test]
    fn diameter_pruning_is_respected() {
        let lat = LatticeVolume::cube(2, 4).unwrap();
        let mut count = 0;
        for_each_connected_subset(&lat, &lat.all(), |s| lat.diameter(s) <= 1, |s| {
            assert!(s.len() <= 2);
            count += 1;
        });
        // 16 singletons plus 24 bonds.
        assert_eq!(count, 40);
    }
}
