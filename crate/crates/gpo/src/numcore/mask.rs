/// Square boolean matrix; `get(i, j)` means row `i` may attend to column `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    data: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(n: usize, fill: bool) -> Self {
        BoolMatrix {
            n,
            data: vec![fill; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        BoolMatrix { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, allowed: bool) {
        self.data[i * self.n + j] = allowed;
    }

    /// Allowed column indices of `row`, ascending.
    pub fn allowed(&self, row: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.get(row, j)).collect()
    }
}
