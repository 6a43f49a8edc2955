//! Structured triangulation of the axisymmetric cross-section `[0, R] × [0, H]`.
//!
//! Nodes are numbered with `z` running fastest, which keeps the bandwidth of
//! every assembled matrix at `nz + 2`.

use crate::error::{Error, Result};

/// Boundary segments of the radial cross-section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// `r = 0`, the symmetry axis.
    Axis,
    /// `z = H`, `r ≤ r_beam`: the irradiated spot.
    Spot,
    /// `z = H`, `r > r_beam`.
    Top,
    /// `r = R`, insulated.
    Lateral,
    /// `z = 0`.
    Bottom,
}

impl BoundaryTag {
    /// Segments that exchange heat with the surroundings.
    pub fn is_cooled(self, cooling_on_bottom: bool) -> bool {
        match self {
            BoundaryTag::Spot | BoundaryTag::Top => true,
            BoundaryTag::Bottom => cooling_on_bottom,
            BoundaryTag::Axis | BoundaryTag::Lateral => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainSpec {
    /// Cylinder radius (m).
    pub radius: f64,
    /// Cylinder height (m).
    pub height: f64,
    /// Laser spot radius (m).
    pub beam_radius: f64,
    pub nr: usize,
    pub nz: usize,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.height > 0.0) {
            return Err(Error::Config("domain radius and height must be positive".into()));
        }
        if !(self.beam_radius > 0.0 && self.beam_radius < self.radius) {
            return Err(Error::Config(format!(
                "beam radius {} must lie in (0, {})",
                self.beam_radius, self.radius
            )));
        }
        if self.nr < 2 || self.nz < 2 {
            return Err(Error::Config("need at least 2 elements in r and z".into()));
        }
        let cells = self.beam_radius / self.dr();
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::Config(format!(
                "beam radius must be a multiple of the radial spacing {:.6e} m (got {cells:.4} cells)",
                self.dr()
            )));
        }
        Ok(())
    }

    pub fn dr(&self) -> f64 {
        self.radius / self.nr as f64
    }

    pub fn dz(&self) -> f64 {
        self.height / self.nz as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub spec: DomainSpec,
    /// `(r, z)` coordinates.
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise triangles.
    pub elements: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub target_node: usize,
    /// Nodes are numbered along the shorter grid direction first, which
    /// keeps the matrix bandwidth at `min(nr, nz) + 2`.
    r_fastest: bool,
}

impl Mesh {
    /// Builds the mesh; `z_target` is measured from the bottom face and must
    /// fall on a grid line.
    pub fn build(spec: DomainSpec, z_target: f64) -> Result<Self> {
        spec.validate()?;
        let (nr, nz) = (spec.nr, spec.nz);
        let (dr, dz) = (spec.dr(), spec.dz());
        if !(0.0..=spec.height).contains(&z_target) {
            return Err(Error::Config(format!(
                "target height {z_target} m outside [0, {}]",
                spec.height
            )));
        }
        let row = z_target / dz;
        let nearest = row.round();
        if (row - nearest).abs() > 1e-9 * nz as f64 {
            return Err(Error::Config(format!(
                "target height {z_target} m is off the grid; nearest grid line is z = {:.6e} m",
                nearest * dz
            )));
        }

        let r_fastest = nr < nz;
        let idx = |ir: usize, iz: usize| node_number(r_fastest, nr, nz, ir, iz);
        let mut nodes = vec![[0.0; 2]; (nr + 1) * (nz + 1)];
        for ir in 0..=nr {
            for iz in 0..=nz {
                let r = if ir == nr { spec.radius } else { ir as f64 * dr };
                let z = if iz == nz { spec.height } else { iz as f64 * dz };
                nodes[idx(ir, iz)] = [r, z];
            }
        }

        let mut elements = Vec::with_capacity(2 * nr * nz);
        for ir in 0..nr {
            for iz in 0..nz {
                let a = idx(ir, iz);
                let b = idx(ir + 1, iz);
                let c = idx(ir + 1, iz + 1);
                let d = idx(ir, iz + 1);
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            }
        }

        let beam_cells = (spec.beam_radius / dr).round() as usize;
        let mut boundary_edges = Vec::with_capacity(2 * (nr + nz));
        for iz in 0..nz {
            boundary_edges.push(BoundaryEdge {
                nodes: [idx(0, iz), idx(0, iz + 1)],
                tag: BoundaryTag::Axis,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [idx(nr, iz), idx(nr, iz + 1)],
                tag: BoundaryTag::Lateral,
            });
        }
        for ir in 0..nr {
            boundary_edges.push(BoundaryEdge {
                nodes: [idx(ir, nz), idx(ir + 1, nz)],
                tag: if ir < beam_cells {
                    BoundaryTag::Spot
                } else {
                    BoundaryTag::Top
                },
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [idx(ir, 0), idx(ir + 1, 0)],
                tag: BoundaryTag::Bottom,
            });
        }

        Ok(Self {
            spec,
            nodes,
            elements,
            boundary_edges,
            target_node: idx(0, nearest as usize),
            r_fastest,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Half bandwidth of P1 matrices under the node numbering.
    pub fn bandwidth(&self) -> usize {
        self.spec.nr.min(self.spec.nz) + 2
    }

    pub fn node_index(&self, ir: usize, iz: usize) -> usize {
        node_number(self.r_fastest, self.spec.nr, self.spec.nz, ir, iz)
    }

    /// Nodes on the symmetry axis, bottom to top.
    pub fn axis_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.spec.nz).map(move |iz| self.node_index(0, iz))
    }

    /// `∫_T r dr dz` for element `e`.
    pub fn element_r_measure(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e].map(|i| self.nodes[i]);
        let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
        area * (a[0] + b[0] + c[0]) / 3.0
    }

    /// Plain-text dump: nodes, elements and tagged boundary edges.
    pub fn to_csv(&self) -> (String, String, String) {
        let mut nodes = String::from("node,r_m,z_m\n");
        for (i, [r, z]) in self.nodes.iter().enumerate() {
            nodes.push_str(&format!("{i},{r:e},{z:e}\n"));
        }
        let mut elements = String::from("element,n0,n1,n2\n");
        for (i, [a, b, c]) in self.elements.iter().enumerate() {
            elements.push_str(&format!("{i},{a},{b},{c}\n"));
        }
        let mut edges = String::from("n0,n1,tag\n");
        for edge in &self.boundary_edges {
            edges.push_str(&format!("{},{},{:?}\n", edge.nodes[0], edge.nodes[1], edge.tag));
        }
        (nodes, elements, edges)
    }
}

fn node_number(r_fastest: bool, nr: usize, nz: usize, ir: usize, iz: usize) -> usize {
    if r_fastest {
        iz * (nr + 1) + ir
    } else {
        ir * (nz + 1) + iz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn reference_domain(nr: usize, nz: usize) -> DomainSpec {
        DomainSpec {
            radius: 2.5e-3,
            height: 0.5e-3,
            beam_radius: 0.2e-3,
            nr,
            nz,
        }
    }

    #[test]
    fn r_weighted_area_is_exact() {
        for (nr, nz) in [(25, 4), (50, 8), (125, 40)] {
            let mesh = Mesh::build(reference_domain(nr, nz), 0.375e-3).unwrap();
            let total: f64 = (0..mesh.elements.len()).map(|e| mesh.element_r_measure(e)).sum();
            let exact = 2.5e-3f64.powi(2) * 0.5e-3 / 2.0;
            assert!((total - 1.5625e-9).abs() < 1e-12 * exact);
            assert!(((total - exact) / exact).abs() < 1e-12);
        }
    }

    #[test]
    fn counting_on_smallest_mesh() {
        let spec = DomainSpec {
            radius: 1.0,
            height: 1.0,
            beam_radius: 0.5,
            nr: 2,
            nz: 2,
        };
        let mesh = Mesh::build(spec, 0.5).unwrap();
        assert_eq!(mesh.elements.len(), 8);
        let count = |t| mesh.boundary_edges.iter().filter(|e| e.tag == t).count();
        assert_eq!(count(BoundaryTag::Spot), 1);
        assert_eq!(count(BoundaryTag::Top), 1);
        assert_eq!(count(BoundaryTag::Axis), 2);
        assert_eq!(count(BoundaryTag::Lateral), 2);
        assert_eq!(count(BoundaryTag::Bottom), 2);
    }

    #[test]
    fn target_node_on_axis() {
        let mesh = Mesh::build(reference_domain(50, 40), 0.375e-3).unwrap();
        let [r, z] = mesh.nodes[mesh.target_node];
        assert_eq!(r, 0.0);
        assert!((z - 0.375e-3).abs() < 1e-15);
    }

    #[test]
    fn off_grid_target_is_rejected() {
        let err = Mesh::build(reference_domain(50, 6), 0.375e-3).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("nearest grid line"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn beam_radius_must_align_with_grid() {
        assert!(matches!(
            Mesh::build(reference_domain(40, 8), 0.375e-3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn edge_ownership() {
        let mesh = Mesh::build(reference_domain(25, 8), 0.375e-3).unwrap();
        let mut owners: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &mesh.elements {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *owners.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary: Vec<(usize, usize)> = mesh
            .boundary_edges
            .iter()
            .map(|e| (e.nodes[0].min(e.nodes[1]), e.nodes[0].max(e.nodes[1])))
            .collect();
        for key in &boundary {
            assert_eq!(owners[key], 1);
        }
        let interior = owners.iter().filter(|(k, _)| !boundary.contains(k));
        for (_, &count) in interior {
            assert_eq!(count, 2);
        }
        assert_eq!(owners.values().filter(|&&c| c == 1).count(), boundary.len());
    }

    #[test]
    fn spot_measures() {
        let mesh = Mesh::build(reference_domain(50, 8), 0.375e-3).unwrap();
        let spot = mesh.boundary_edges.iter().filter(|e| e.tag == BoundaryTag::Spot);
        let (mut length, mut weighted) = (0.0, 0.0);
        for edge in spot {
            let [a, b] = edge.nodes.map(|i| mesh.nodes[i]);
            let len = (b[0] - a[0]).abs();
            length += len;
            weighted += len * 0.5 * (a[0] + b[0]);
        }
        assert!((length - 0.2e-3).abs() < 1e-15);
        assert!((weighted - 0.2e-3f64.powi(2) / 2.0).abs() < 1e-20);
    }

    #[test]
    fn elements_are_counter_clockwise() {
        let mesh = Mesh::build(reference_domain(25, 4), 0.375e-3).unwrap();
        assert!((0..mesh.elements.len()).all(|e| {
            let [a, b, c] = mesh.elements[e].map(|i| mesh.nodes[i]);
            (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]) > 0.0
        }));
    }

    #[test]
    fn bandwidth_covers_all_couplings() {
        for (nr, nz) in [(25, 8), (25, 40)] {
            let mesh = Mesh::build(reference_domain(nr, nz), 0.375e-3).unwrap();
            let widest = mesh
                .elements
                .iter()
                .flat_map(|t| [t[0].abs_diff(t[1]), t[1].abs_diff(t[2]), t[0].abs_diff(t[2])])
                .max()
                .unwrap();
            assert_eq!(widest, mesh.bandwidth());
            assert_eq!(mesh.bandwidth(), nr.min(nz) + 2);
        }
    }

    #[test]
    fn node_index_matches_coordinates() {
        for (nr, nz) in [(25, 8), (25, 40)] {
            let spec = reference_domain(nr, nz);
            let mesh = Mesh::build(spec, 0.375e-3).unwrap();
            for ir in 0..=nr {
                for iz in 0..=nz {
                    let [r, z] = mesh.nodes[mesh.node_index(ir, iz)];
                    assert!((r - ir as f64 * spec.dr()).abs() < 1e-15);
                    assert!((z - iz as f64 * spec.dz()).abs() < 1e-15);
                }
            }
            let [r, z] = mesh.nodes[mesh.target_node];
            assert_eq!(r, 0.0);
            assert!((z - 0.375e-3).abs() < 1e-15);
        }
    }
}
