use diffcore::serialize::{decode, decode_as, decode_prefix, to_bytes, AnyTensor};
use diffcore::{DType, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn round_trip_real32(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|i| (i as f32 + seed as f32) * 0.25 - 7.0).collect();
        let t = Tensor::new(&shape, data).unwrap();
        let back = decode(&to_bytes(&t)).unwrap();
        prop_assert_eq!(back, AnyTensor::Real32(t));
    }

    #[test]
    fn round_trip_real64_bits(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
        let t = Tensor::new(&[values.len()], values.clone()).unwrap();
        let back: Tensor<f64> = decode_as(&to_bytes(&t)).unwrap();
        for (a, b) in back.data().iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = decode(&bytes);
    }
}

#[test]
fn concatenated_stream() {
    let a = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::<f32>::new(&[1, 1], vec![3.0]).unwrap();
    let mut bytes = to_bytes(&a);
    bytes.extend(to_bytes(&b));
    let (first, used) = decode_prefix(&bytes).unwrap();
    assert_eq!(first.dtype(), DType::Real64);
    let second = decode(&bytes[used..]).unwrap();
    assert_eq!(second.shape(), &[1, 1]);
}
