//! Benchmark and test programs.
//!
//! Every program has a `main` that fills its array arguments with a fixed
//! deterministic pattern and then calls the kernel. Grid extents are baked
//! into the array types; the iteration space is driven by the i64
//! parameters, so the static analysis sees parameter-dependent bounds.
//!
//! The two stencils follow the Polybench 4 definitions of `jacobi-2d` and
//! `fdtd-2d`, including their initializers.

use alloc::string::String;
use alloc::vec::Vec;

use crate::interp::Value;
use crate::ir::{Program, ValueType};

/// A generated program and the scalar arguments its `main` expects.
#[derive(Debug, Clone)]
pub struct CorpusProgram {
    pub name: String,
    pub source: String,
    /// The function doing the work.
    pub kernel: &'static str,
    /// Values for `main`'s i64 parameters, in order.
    pub scalars: Vec<i64>,
}

impl CorpusProgram {
    pub fn parse(&self) -> Program {
        crate::ir::parse_program(&self.source).unwrap_or_else(|e| panic!("corpus program {} is invalid: {e}", self.name))
    }

    /// Arguments for `main`: the scalars followed by zeroed arrays.
    pub fn main_args(&self, p: &Program) -> Vec<Value> {
        let main = p.function("main").expect("corpus programs define main");
        let mut scalars = self.scalars.iter();
        main.params
            .iter()
            .map(|param| match &param.ty {
                ValueType::Scalar(_) => Value::I64(*scalars.next().expect("scalar argument")),
                ty => Value::zeros(ty),
            })
            .collect()
    }
}

fn fill(template: &str, vars: &[(&str, usize)]) -> String {
    let mut s = String::from(template);
    for (k, v) in vars {
        s = s.replace(k, &alloc::format!("{v}"));
    }
    s
}

const JACOBI: &str = "\
# Polybench jacobi-2d
func jacobi_2d(tsteps: i64, n: i64, A: f64[@N][@N], B: f64[@N][@N]) {
  loop t in [0, tsteps) step 1 {
    loop i in [1, n - 1) step 1 {
      loop j in [1, n - 1) step 1 {
        B[i][j] = 0.2 * (A[i][j] + A[i][j - 1] + A[i][j + 1] + A[i + 1][j] + A[i - 1][j])
      }
    }
    loop i in [1, n - 1) step 1 {
      loop j in [1, n - 1) step 1 {
        A[i][j] = 0.2 * (B[i][j] + B[i][j - 1] + B[i][j + 1] + B[i + 1][j] + B[i - 1][j])
      }
    }
  }
}

func main(n: i64, tsteps: i64, A: f64[@N][@N], B: f64[@N][@N]) {
  loop i in [0, n) step 1 {
    loop j in [0, n) step 1 {
      A[i][j] = (f64(i) * f64(j + 2) + 2.0) / f64(n)
      B[i][j] = (f64(i) * f64(j + 3) + 3.0) / f64(n)
    }
  }
  call jacobi_2d(tsteps, n, A, B)
}
";

/// Jacobi 2-D on an `n`×`n` grid for `steps` time steps.
pub fn jacobi_2d(n: usize, steps: usize) -> CorpusProgram {
    CorpusProgram {
        name: alloc::format!("jacobi2d-n{n}-s{steps}"),
        source: fill(JACOBI, &[("@N", n)]),
        kernel: "jacobi_2d",
        scalars: alloc::vec![n as i64, steps as i64],
    }
}

const FDTD: &str = "\
# Polybench fdtd-2d
func fdtd_2d(tmax: i64, nx: i64, ny: i64, ex: f64[@N][@N], ey: f64[@N][@N], hz: f64[@N][@N], fict: f64[@T]) {
  loop t in [0, tmax) step 1 {
    loop j in [0, ny) step 1 {
      ey[0][j] = fict[t]
    }
    loop i in [1, nx) step 1 {
      loop j in [0, ny) step 1 {
        ey[i][j] = ey[i][j] - 0.5 * (hz[i][j] - hz[i - 1][j])
      }
    }
    loop i in [0, nx) step 1 {
      loop j in [1, ny) step 1 {
        ex[i][j] = ex[i][j] - 0.5 * (hz[i][j] - hz[i][j - 1])
      }
    }
    loop i in [0, nx - 1) step 1 {
      loop j in [0, ny - 1) step 1 {
        hz[i][j] = hz[i][j] - 0.7 * (ex[i][j + 1] - ex[i][j] + ey[i + 1][j] - ey[i][j])
      }
    }
  }
}

func main(n: i64, tmax: i64, ex: f64[@N][@N], ey: f64[@N][@N], hz: f64[@N][@N], fict: f64[@T]) {
  loop t in [0, tmax) step 1 {
    fict[t] = f64(t)
  }
  loop i in [0, n) step 1 {
    loop j in [0, n) step 1 {
      ex[i][j] = f64(i) * f64(j + 1) / f64(n)
      ey[i][j] = f64(i) * f64(j + 2) / f64(n)
      hz[i][j] = f64(i) * f64(j + 3) / f64(n)
    }
  }
  call fdtd_2d(tmax, n, n, ex, ey, hz, fict)
}
";

/// FDTD 2-D on an `n`×`n` grid for `steps` time steps.
pub fn fdtd_2d(n: usize, steps: usize) -> CorpusProgram {
    CorpusProgram {
        name: alloc::format!("fdtd2d-n{n}-s{steps}"),
        source: fill(FDTD, &[("@N", n), ("@T", steps.max(1))]),
        kernel: "fdtd_2d",
        scalars: alloc::vec![n as i64, steps as i64],
    }
}

const VECTOR_ADD: &str = "\
func vector_add(reps: i64, n: i64, a: f64, X: f64[@N], Y: f64[@N], Z: f64[@N]) {
  loop r in [0, reps) step 1 {
    loop i in [0, n) step 1 {
      Z[i] = a * X[i] + Y[i]
    }
    loop i in [0, n) step 2 {
      Y[i] = Y[i] + 1.0
    }
  }
}

func main(n: i64, reps: i64, X: f64[@N], Y: f64[@N], Z: f64[@N]) {
  loop i in [0, n) step 1 {
    X[i] = f64(i) / 3.0
    Y[i] = 1.0 - f64(i * i) / 7.0
  }
  call vector_add(reps, n, 0.25, X, Y, Z)
}
";

const MATMUL: &str = "\
func matmul(n: i64, A: f64[@N][@N], B: f64[@N][@N], C: f64[@N][@N]) {
  loop i in [0, n) step 1 {
    loop j in [0, n) step 1 {
      loop k in [0, n) step 1 {
        C[i][j] = C[i][j] + A[i][k] * B[k][j]
      }
    }
  }
}

func main(n: i64, reps: i64, A: f64[@N][@N], B: f64[@N][@N], C: f64[@N][@N]) {
  loop i in [0, n) step 1 {
    loop j in [0, n) step 1 {
      A[i][j] = f64(i * j + 1) / f64(n)
      B[i][j] = f64(i - j) / 11.0
    }
  }
  loop r in [0, reps) step 1 {
    call matmul(n, A, B, C)
  }
}
";

const PREFIX_SUM: &str = "\
func prefix_sum(reps: i64, n: i64, X: f64[@N], S: f64[@N]) {
  loop r in [0, reps) step 1 {
    S[0] = X[0]
    loop i in [1, n) step 1 {
      S[i] = S[i - 1] + X[i]
    }
  }
}

func main(n: i64, reps: i64, X: f64[@N], S: f64[@N]) {
  loop i in [0, n) step 1 {
    X[i] = 1.0 / f64(i + 1)
  }
  call prefix_sum(reps, n, X, S)
}
";

const INT_KERNEL: &str = "\
func int_kernel(reps: i64, n: i64, K: i64[@N], H: i64[@N]) {
  loop r in [0, reps) step 1 {
    loop i in [0, n) step 1 {
      H[i] = (K[i] * 7 + i * r) / (i + 1) - K[i] / 3
    }
  }
}

func main(n: i64, reps: i64, K: i64[@N], H: i64[@N]) {
  loop i in [0, n) step 1 {
    K[i] = i * 37 - 1000
  }
  call int_kernel(reps, n, K, H)
}
";

const SAXPY_HELPER: &str = "\
func scale(a: f64, k: i64) -> f64 {
  return a * f64(k) + 0.5
}

func saxpy(reps: i64, n: i64, a: f64, X: f64[@N], Y: f64[@N]) {
  let s = call scale(a, 3)
  loop r in [0, reps) step 1 {
    loop i in [0, n) step 1 {
      Y[i] = s * X[i] + Y[i]
    }
  }
}

func main(n: i64, reps: i64, X: f64[@N], Y: f64[@N]) {
  loop i in [0, n) step 1 {
    X[i] = f64(i) - 3.5
  }
  call saxpy(reps, n, 0.125, X, Y)
}
";

const STENCIL_1D: &str = "\
func smooth_in_place(reps: i64, n: i64, A: f64[@N]) {
  loop r in [0, reps) step 1 {
    loop i in [1, n - 1) step 1 {
      A[i] = (A[i - 1] + A[i] + A[i + 1]) / 3.0
    }
  }
}

func main(n: i64, reps: i64, A: f64[@N]) {
  loop i in [0, n) step 1 {
    A[i] = f64(i * i) / f64(n)
  }
  call smooth_in_place(reps, n, A)
}
";

const REDUCTION: &str = "\
func dot(reps: i64, n: i64, X: f64[@N], Y: f64[@N]) -> f64 {
  let s = 0.0
  loop r in [0, reps) step 1 {
    loop i in [0, n) step 1 {
      s = s + X[i] * Y[i]
    }
  }
  return s
}

func main(n: i64, reps: i64, X: f64[@N], Y: f64[@N]) -> f64 {
  loop i in [0, n) step 1 {
    X[i] = f64(i) * 0.1
    Y[i] = 2.0 - f64(i) * 0.01
  }
  let d = call dot(reps, n, X, Y)
  return d
}
";

const TRIANGULAR: &str = "\
func lower_fill(reps: i64, n: i64, X: f64[@N], L: f64[@N][@N]) {
  loop r in [0, reps) step 1 {
    loop i in [0, n) step 1 {
      loop j in [0, i + 1) step 1 {
        L[i][j] = f64(i - j) * 0.5 + X[j] * f64(r + 1)
      }
    }
  }
}

func main(n: i64, reps: i64, X: f64[@N], L: f64[@N][@N]) {
  loop i in [0, n) step 1 {
    X[i] = -(f64(i) / 5.0)
  }
  call lower_fill(reps, n, X, L)
}
";

/// Small programs exercising parallel, sequential, integer, helper-call and
/// reduction paths. `n` is the array extent, `reps` the repetition count.
pub fn crafted(n: usize, reps: usize) -> Vec<CorpusProgram> {
    let table: [(&str, &str, &'static str); 8] = [
        ("vector-add", VECTOR_ADD, "vector_add"),
        ("matmul", MATMUL, "matmul"),
        ("prefix-sum", PREFIX_SUM, "prefix_sum"),
        ("int-kernel", INT_KERNEL, "int_kernel"),
        ("saxpy-helper", SAXPY_HELPER, "saxpy"),
        ("stencil-1d", STENCIL_1D, "smooth_in_place"),
        ("reduction", REDUCTION, "dot"),
        ("triangular", TRIANGULAR, "lower_fill"),
    ];
    table
        .iter()
        .map(|(name, src, kernel)| CorpusProgram {
            name: (*name).into(),
            source: fill(src, &[("@N", n)]),
            kernel,
            scalars: alloc::vec![n as i64, reps as i64],
        })
        .collect()
}

/// Every program in the corpus at the given size.
pub fn all(n: usize, steps: usize) -> Vec<CorpusProgram> {
    let mut v = alloc::vec![jacobi_2d(n, steps), fdtd_2d(n, steps)];
    v.extend(crafted(n, steps));
    v
}

/// Looks up a benchmark program by its CLI name.
pub fn benchmark(name: &str, n: usize, steps: usize) -> Option<CorpusProgram> {
    match name {
        "jacobi2d" | "jacobi-2d" | "jacobi_2d" => Some(jacobi_2d(n, steps)),
        "fdtd2d" | "fdtd-2d" | "fdtd_2d" => Some(fdtd_2d(n, steps)),
        _ => None,
    }
}
