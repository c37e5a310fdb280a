use nalgebra::DMatrix;

/// Order-3 tensor of shape `left x mode x right`, stored with the left
/// rank index fastest and the right rank index slowest. Both unfoldings
/// `(left*mode) x right` and `left x (mode*right)` are therefore plain
/// column-major reshapes of `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Carriage {
    left: usize,
    mode: usize,
    right: usize,
    data: Vec<f64>,
}

impl Carriage {
    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Self {
            left,
            mode,
            right,
            data: vec![0.0; left * mode * right],
        }
    }

    pub fn from_data(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), left * mode * right, "carriage data length");
        Self {
            left,
            mode,
            right,
            data,
        }
    }

    /// Rank-1 carriage holding a single vector.
    pub fn from_vector(v: &[f64]) -> Self {
        Self::from_data(1, v.len(), 1, v.to_vec())
    }

    #[inline]
    pub fn left(&self) -> usize {
        self.left
    }

    #[inline]
    pub fn mode(&self) -> usize {
        self.mode
    }

    #[inline]
    pub fn right(&self) -> usize {
        self.right
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, a: usize, i: usize, b: usize) -> usize {
        a + self.left * (i + self.mode * b)
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[self.offset(a, i, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, value: f64) {
        let o = self.offset(a, i, b);
        self.data[o] = value;
    }

    /// `(left*mode) x right` unfolding.
    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.left * self.mode, self.right, &self.data)
    }

    /// `left x (mode*right)` unfolding.
    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.left, self.mode * self.right, &self.data)
    }

    pub fn from_left_unfolding(mode: usize, m: DMatrix<f64>) -> Self {
        let (rows, right) = m.shape();
        debug_assert_eq!(rows % mode, 0);
        Self::from_data(rows / mode, mode, right, m.as_slice().to_vec())
    }

    pub fn from_right_unfolding(mode: usize, m: DMatrix<f64>) -> Self {
        let (left, cols) = m.shape();
        debug_assert_eq!(cols % mode, 0);
        Self::from_data(left, mode, cols / mode, m.as_slice().to_vec())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self.data.iter().map(|x| x * c).collect(),
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
