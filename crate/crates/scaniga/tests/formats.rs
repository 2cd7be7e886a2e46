use scaniga::voxel_file::{self, Encoding, FormatError, ValueType, MAGIC};
use scaniga_core::{Shape, VoxelGrid};

#[test]
fn ascii_values_land_x_fastest() {
    let text = format!("{MAGIC}\nndim 2\ndims 2 2\nspacing 0.5 0.25\ntype f64\nencoding ascii\ndata\n0 1\n1 0\n");
    let g = voxel_file::parse(text.as_bytes()).unwrap();
    assert_eq!(g.values(), &[0.0, 1.0, 1.0, 0.0]);
    assert_eq!(g.value([1, 0, 0]), 1.0);
    assert_eq!(&g.spacing()[..2], &[0.5, 0.25]);
    assert_eq!(&g.origin()[..2], &[0.0, 0.0]);
}

#[test]
fn binary_f64_round_trip_is_bit_identical() {
    let values: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
    let g = VoxelGrid::with_origin(Shape::d3(2, 3, 4), &[0.1, 0.2, 0.3], &[-1.0, 0.5, 2.0], values).unwrap();
    let back = voxel_file::parse(&voxel_file::to_bytes(&g, ValueType::F64, Encoding::Binary)).unwrap();
    assert!(g.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back.spacing(), g.spacing());
    assert_eq!(back.origin(), g.origin());
    let ascii = voxel_file::parse(&voxel_file::to_bytes(&g, ValueType::F64, Encoding::Ascii)).unwrap();
    assert_eq!(ascii.values(), g.values());
}

#[test]
fn u8_values_are_scaled_to_unit_range() {
    let mut bytes = format!("{MAGIC}\nndim 1\ndims 3\ntype u8\nencoding binary\ndata\n").into_bytes();
    bytes.extend([0u8, 51, 255]);
    let g = voxel_file::parse(&bytes).unwrap();
    assert_eq!(g.values(), &[0.0, 0.2, 1.0]);
}

#[test]
fn short_payload_is_reported() {
    let text = format!("{MAGIC}\nndim 2\ndims 2 2\ntype f64\nencoding ascii\ndata\n0 1 1\n");
    assert!(matches!(
        voxel_file::parse(text.as_bytes()),
        Err(FormatError::Payload { expected: 4, got: 3 })
    ));
    let text = format!("{MAGIC}\nndim 1\ndims 2\ntype u8\nencoding ascii\ndata\n3 300\n");
    assert!(matches!(voxel_file::parse(text.as_bytes()), Err(FormatError::Value(_))));
}
