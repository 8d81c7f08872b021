//! Reverse pass over the recorded op graph.

use std::collections::{HashMap, HashSet};

use super::Tensor;
use crate::error::{Error, Result};

/// Backpropagate from a scalar loss.
///
/// Accumulates `d(loss)/d(leaf)` into the `grad` buffer of every reachable
/// leaf created with `requires_grad = true`. Gradients add up across calls
/// until [`Tensor::clear_grad`] is invoked, so running the same graph twice
/// exactly doubles every gradient.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::shape(
            "backward",
            format!("loss must be scalar, got {}", loss.shape()),
        ));
    }

    // Topological order via iterative post-order DFS over parents.
    let mut topo: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(loss.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            topo.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        let op = t.grad_fn();
        stack.push((t, true));
        if let Some(op) = op {
            for p in op.parents() {
                if p.needs_grad() && !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }
    }

    // Adjoints for interior nodes live only for the duration of this pass.
    let mut adjoint: HashMap<u64, Vec<f64>> = HashMap::new();
    adjoint.insert(loss.id(), vec![1.0]);

    for node in topo.iter().rev() {
        let Some(g) = adjoint.remove(&node.id()) else {
            continue;
        };
        match node.grad_fn() {
            None => {
                if node.requires_grad() {
                    node.accumulate_grad(&g);
                }
            }
            Some(op) => {
                let parents = op.parents();
                let grads = op.backward(&g);
                debug_assert_eq!(parents.len(), grads.len());
                for (p, pg) in parents.iter().zip(grads) {
                    let Some(pg) = pg else { continue };
                    debug_assert_eq!(pg.len(), p.numel(), "gradient shape mismatch");
                    match adjoint.get_mut(&p.id()) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&pg) {
                                *a += b;
                            }
                        }
                        None => {
                            adjoint.insert(p.id(), pg);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
