//! Data-parallel helpers.
//!
//! Every independent batch in the crate (DtN columns, operator columns,
//! random families, sweep points) goes through these functions. With the
//! `parallel` feature the work is spread over the rayon pool; without it, or
//! with [`Execution::Sequential`], items run in index order on the calling
//! thread. Results are always returned in index order, and each item is
//! computed by the same sequential code path, so outputs are bit-identical
//! between the two modes.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be dispatched to rayon.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] but stops at the first failing index (lowest index
/// wins, so the reported error does not depend on scheduling).
pub fn try_map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(n, exec, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_indexed(1000, Execution::Sequential, f);
        let b = map_indexed(1000, Execution::Parallel, f);
        assert_eq!(a, b);
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<usize>> = try_map_indexed(10, Execution::Parallel, |i| {
            if i >= 3 {
                Err(crate::Error::Input(format!("bad {i}")))
            } else {
                Ok(i)
            }
        });
        assert!(r.unwrap_err().to_string().contains("bad 3"));
    }
}
