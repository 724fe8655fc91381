//! Structural and spectral summary of a signed digraph.

use serde::Serialize;
use thiserror::Error;

use crate::signed_graph::{
    classify_connectivity, laplacian_blocks, strong_components, structural_balance, BalanceVerdict,
    ComponentPartition, Connectivity, GraphError, LaplacianBlocks, SignedDigraph,
};
use crate::spectral::{
    balance_gap, containment_weights, diagonal_stabilizer, left_positive_vector, ContainmentWeights,
    DiagonalStabilizer, PerronData, SpectralError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone)]
pub struct CscAnalysis {
    /// 0-based node indices in ascending order.
    pub members: Vec<usize>,
    pub balance: BalanceVerdict,
    pub perron: PerronData,
    /// `a(L_k)` for balanced components with at least two nodes.
    pub gap: Option<f64>,
    /// `Xi` with `Xi L_k + L_k' Xi > 0` for unbalanced components.
    pub stabilizer: Option<DiagonalStabilizer>,
}

#[derive(Debug, Clone)]
pub struct GraphAnalysis {
    pub graph: SignedDigraph,
    pub connectivity: Connectivity,
    pub partition: ComponentPartition,
    pub blocks: LaplacianBlocks,
    pub cscs: Vec<CscAnalysis>,
    pub containment: Option<ContainmentWeights>,
    pub follower_stabilizer: Option<DiagonalStabilizer>,
}

pub fn analyze(g: &SignedDigraph, seed: u64) -> Result<GraphAnalysis, AnalysisError> {
    let connectivity = classify_connectivity(g);
    let partition = strong_components(g);
    let blocks = laplacian_blocks(g, &partition);

    let mut cscs = Vec::with_capacity(partition.csc_count());
    for k in 0..partition.csc_count() {
        let members = partition.csc_members(k).to_vec();
        let balance = structural_balance(g, &members)?;
        let l_k = &blocks.l_lk[k];
        let perron = left_positive_vector(l_k)?;
        let mut gap = None;
        let mut stabilizer = None;
        if members.len() > 1 {
            match balance.gauge_f64() {
                Some(gauge) if balance.balanced => gap = Some(balance_gap(l_k, &gauge, &perron)?),
                _ => stabilizer = diagonal_stabilizer(l_k, seed.wrapping_add(k as u64)).ok(),
            }
        }
        cscs.push(CscAnalysis { members, balance, perron, gap, stabilizer });
    }

    let (containment, follower_stabilizer) = if blocks.follower_count() > 0 {
        let verdicts: Vec<BalanceVerdict> = cscs.iter().map(|c| c.balance.clone()).collect();
        (
            Some(containment_weights(&blocks, &verdicts)?),
            diagonal_stabilizer(&blocks.l_f, seed).ok(),
        )
    } else {
        (None, None)
    };

    Ok(GraphAnalysis {
        graph: g.clone(),
        connectivity,
        partition,
        blocks,
        cscs,
        containment,
        follower_stabilizer,
    })
}

impl GraphAnalysis {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn leaders_balanced(&self) -> bool {
        self.cscs.iter().all(|c| c.balance.balanced)
    }

    pub fn any_csc_balanced(&self) -> bool {
        self.cscs.iter().any(|c| c.balance.balanced)
    }

    /// One-line human summary, e.g. `Strong, balanced, gauge (+,+,+)`.
    pub fn summary(&self) -> String {
        let mut parts = vec![self.connectivity.to_string()];
        for (k, c) in self.cscs.iter().enumerate() {
            let prefix = if self.cscs.len() > 1 { format!("CSC {} ", k + 1) } else { String::new() };
            match &c.balance.gauge {
                Some(g) if c.balance.balanced => {
                    let signs: Vec<&str> = g.iter().map(|&s| if s > 0 { "+" } else { "-" }).collect();
                    parts.push(format!("{prefix}balanced, gauge ({})", signs.join(",")));
                }
                _ => parts.push(format!("{prefix}unbalanced")),
            }
        }
        parts.join(", ")
    }

    pub fn report(&self) -> AnalysisReport {
        let one = |v: &[usize]| v.iter().map(|i| i + 1).collect::<Vec<_>>();
        AnalysisReport {
            n: self.n(),
            connectivity: self.connectivity.to_string(),
            summary: self.summary(),
            leaders: one(&self.partition.leaders),
            followers: one(&self.partition.followers),
            cscs: self
                .cscs
                .iter()
                .map(|c| CscReport {
                    members: one(&c.members),
                    balanced: c.balance.balanced,
                    gauge: c.balance.gauge.clone(),
                    witness_cycle: c
                        .balance
                        .witness
                        .as_ref()
                        .map(|w| w.iter().map(|&(a, b)| (a + 1, b + 1)).collect()),
                    perron: c.perron.p.clone(),
                    gap: c.gap,
                    stabilizer: c.stabilizer.clone(),
                })
                .collect(),
            zeta: self.containment.as_ref().and_then(|w| w.zeta()).map(|z| z.iter().copied().collect()),
            containment: self.containment.clone(),
            follower_stabilizer: self.follower_stabilizer.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CscReport {
    pub members: Vec<usize>,
    pub balanced: bool,
    pub gauge: Option<Vec<i8>>,
    pub witness_cycle: Option<Vec<(usize, usize)>>,
    pub perron: Vec<f64>,
    pub gap: Option<f64>,
    pub stabilizer: Option<DiagonalStabilizer>,
}

/// Serializable analysis; node indices are 1-based.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub connectivity: String,
    pub summary: String,
    pub leaders: Vec<usize>,
    pub followers: Vec<usize>,
    pub cscs: Vec<CscReport>,
    pub zeta: Option<Vec<f64>>,
    pub containment: Option<ContainmentWeights>,
    pub follower_stabilizer: Option<DiagonalStabilizer>,
}
