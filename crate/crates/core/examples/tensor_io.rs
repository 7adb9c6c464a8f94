//! Binary tensor files and the JSON formats used by the CLI.

use bevlift::geometry::CameraRig;
use bevlift::io::{decode_tensor, encode_tensor, rig_from_json, rig_to_json};
use ndarray::{ArrayD, IxDyn};

fn main() -> bevlift::Result<()> {
    let t = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4]), |ix| (ix[0] * 12 + ix[1] * 4 + ix[2]) as f32 * 0.5);
    let bytes = encode_tensor(&t)?;
    println!("{} bytes, header {:02x?}", bytes.len(), &bytes[..16]);
    assert_eq!(decode_tensor(&bytes)?, t);

    match decode_tensor(&bytes[..bytes.len() - 3]) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => unreachable!(),
    }

    let json = rig_to_json(&CameraRig::six_camera())?;
    let rig = rig_from_json(&json)?;
    println!("rig JSON {} bytes, {} cameras, first:", json.len(), rig.len());
    println!("{}", json.lines().skip(2).take(12).collect::<Vec<_>>().join("\n"));
    Ok(())
}
