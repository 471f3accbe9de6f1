use super::{Graph, NodeId, NumericsError, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Coordinates probed per parameter tensor; tensors smaller than this are probed exhaustively.
    pub coords_per_param: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            coords_per_param: 8,
        }
    }
}

/// Worst disagreement between the tape gradient and central finite differences.
///
/// The error at a coordinate is `|g_auto − g_fd| / max(|g_auto|, |g_fd|, 1e-12)`.
/// Probed coordinates are evenly strided through each tensor.
pub fn grad_check<F>(
    mut f: F,
    store: &ParamStore,
    config: GradCheckConfig,
) -> Result<f64, NumericsError>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId, NumericsError>,
{
    if config.epsilon.is_nan() || config.epsilon <= 0.0 {
        return Err(NumericsError::Contract(format!(
            "epsilon must be positive, got {}",
            config.epsilon
        )));
    }
    let mut graph = Graph::new();
    let loss = f(&mut graph, store)?;
    let base = graph.value(loss).data()[0];
    if !base.is_finite() {
        return Err(NumericsError::NonFinite(format!("loss {base}")));
    }
    let grads = graph.backward(loss, store)?;
    drop(graph);

    let mut eval = |s: &ParamStore| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let l = f(&mut g, s)?;
        let v = g.value(l).data()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumericsError::NonFinite(format!("perturbed loss {v}")))
        }
    };

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let n = store.get(id).numel();
        let count = config.coords_per_param.min(n).max(1);
        for j in 0..count {
            let coord = j * n / count;
            let original = store.get(id).data()[coord];
            probe.get_mut(id).data_mut()[coord] = original + config.epsilon;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[coord] = original - config.epsilon;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[coord] = original;
            let fd = (plus - minus) / (2.0 * config.epsilon);
            let auto = grads.get(id).data()[coord];
            let err = (auto - fd).abs() / auto.abs().max(fd.abs()).max(1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
