//! Minimal dense 5-D tensor, laid out `[batch, time, height, width, channel]`
//! row-major. Channels-last keeps the im2col gathers contiguous.

use crate::num::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    dims: [usize; 5],
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(dims: [usize; 5]) -> Self {
        let numel = dims.iter().product();
        Tensor { dims, data: vec![S::zero(); numel] }
    }

    pub fn from_vec(dims: [usize; 5], data: Vec<S>) -> Self {
        assert_eq!(data.len(), dims.iter().product::<usize>(), "tensor data/dims mismatch");
        Tensor { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }
    #[inline]
    pub fn t(&self) -> usize {
        self.dims[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.dims[4]
    }
    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3] * self.dims[4]
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[S] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }
    #[inline]
    pub fn sample_mut(&mut self, i: usize) -> &mut [S] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// self += other
    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.dims, other.dims, "add_assign dims mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// Elementwise sum, allocating.
    pub fn add(&self, other: &Tensor<S>) -> Tensor<S> {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
        assert_eq!(a.dims[..4], b.dims[..4], "concat_channels geometry mismatch");
        let (ca, cb) = (a.c(), b.c());
        let mut out = Tensor::zeros([a.n(), a.t(), a.h(), a.w(), ca + cb]);
        let pixels = a.numel() / ca;
        let out_data = out.data_mut();
        for p in 0..pixels {
            out_data[p * (ca + cb)..p * (ca + cb) + ca].copy_from_slice(&a.data[p * ca..(p + 1) * ca]);
            out_data[p * (ca + cb) + ca..(p + 1) * (ca + cb)].copy_from_slice(&b.data[p * cb..(p + 1) * cb]);
        }
        out
    }

    /// Split a channel-concatenated tensor back into its two parts.
    pub fn split_channels(&self, ca: usize) -> (Tensor<S>, Tensor<S>) {
        let cb = self.c() - ca;
        let mut a = Tensor::zeros([self.n(), self.t(), self.h(), self.w(), ca]);
        let mut b = Tensor::zeros([self.n(), self.t(), self.h(), self.w(), cb]);
        let pixels = self.numel() / self.c();
        for p in 0..pixels {
            a.data[p * ca..(p + 1) * ca].copy_from_slice(&self.data[p * (ca + cb)..p * (ca + cb) + ca]);
            b.data[p * cb..(p + 1) * cb].copy_from_slice(&self.data[p * (ca + cb) + ca..(p + 1) * (ca + cb)]);
        }
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::from_vec([1, 1, 2, 2, 2], (0..8).map(|v| v as f32).collect());
        let b = Tensor::from_vec([1, 1, 2, 2, 1], (10..14).map(|v| v as f32).collect());
        let cat = Tensor::concat_channels(&a, &b);
        assert_eq!(cat.dims(), [1, 1, 2, 2, 3]);
        assert_eq!(cat.data()[..3], [0.0, 1.0, 10.0]);
        let (a2, b2) = cat.split_channels(2);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
