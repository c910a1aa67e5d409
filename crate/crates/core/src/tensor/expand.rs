use std::sync::Arc;

use crate::basis::KernelBasis;

/// One `(input slot → output slot)` block of a steerable kernel.
#[derive(Clone, Debug)]
pub struct ExpansionBlock {
    pub weight_offset: usize,
    pub out_offset: usize,
    pub in_offset: usize,
    pub basis: Arc<KernelBasis>,
}

/// Linear map from a flat weight vector to a dense `[cout, cin, K, K, K]`
/// kernel: each block is a weighted sum of its basis elements.
#[derive(Clone, Debug)]
pub struct ExpansionPlan {
    pub cout: usize,
    pub cin: usize,
    pub size: usize,
    pub n_weights: usize,
    pub blocks: Vec<ExpansionBlock>,
}

impl ExpansionPlan {
    pub fn kernel_shape(&self) -> [usize; 5] {
        [self.cout, self.cin, self.size, self.size, self.size]
    }

    pub fn expand(&self, weights: &[f64]) -> Vec<f64> {
        let vox = self.size.pow(3);
        let mut k = vec![0.0; self.cout * self.cin * vox];
        for blk in &self.blocks {
            let (dout, din) = (blk.basis.dout(), blk.basis.din());
            for b in 0..blk.basis.len() {
                let wb = weights[blk.weight_offset + b];
                if wb == 0.0 {
                    continue;
                }
                let e = blk.basis.element(b);
                for i in 0..dout {
                    for j in 0..din {
                        let dst = &mut k[((blk.out_offset + i) * self.cin + blk.in_offset + j) * vox..][..vox];
                        let src = &e[(i * din + j) * vox..][..vox];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wb * s;
                        }
                    }
                }
            }
        }
        k
    }

    /// Adjoint of [`expand`](Self::expand): weight gradients from a kernel gradient.
    pub fn adjoint(&self, grad_kernel: &[f64]) -> Vec<f64> {
        let vox = self.size.pow(3);
        let mut g = vec![0.0; self.n_weights];
        for blk in &self.blocks {
            let (dout, din) = (blk.basis.dout(), blk.basis.din());
            for b in 0..blk.basis.len() {
                let e = blk.basis.element(b);
                let mut s = 0.0;
                for i in 0..dout {
                    for j in 0..din {
                        let gk = &grad_kernel[((blk.out_offset + i) * self.cin + blk.in_offset + j) * vox..][..vox];
                        let src = &e[(i * din + j) * vox..][..vox];
                        s += gk.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                g[blk.weight_offset + b] += s;
            }
        }
        g
    }
}
