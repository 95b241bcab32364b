use std::fs;

use nalgebra::{Matrix4, Rotation3, Vector3};
use panoptic4d::kitti_io::*;
use panoptic4d::volume4d::align_scan;
use panoptic4d::Error;
use proptest::prelude::*;

fn f32_bytes(vals: &[f32]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[test]
fn golden_point_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("000000.bin");
    fs::write(&path, f32_bytes(&[1.0, 2.0, 3.0, 0.5])).unwrap();
    let scan = read_point_scan(&path).unwrap();
    assert_eq!(scan.points, vec![[1.0, 2.0, 3.0]]);
    assert_eq!(scan.remission, vec![0.5]);

    fs::write(&path, []).unwrap();
    assert!(read_point_scan(&path).unwrap().is_empty());

    let mut bytes = f32_bytes(&[1.0, 2.0, 3.0, 0.5]);
    bytes.push(0);
    fs::write(&path, bytes).unwrap();
    assert!(matches!(read_point_scan(&path), Err(Error::Truncated { len: 17, .. })));
}

#[test]
fn golden_label_word() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("000000.label");
    fs::write(&path, 0x0001_000Au32.to_le_bytes()).unwrap();
    let l = read_labels(&path, 1).unwrap();
    assert_eq!((l.semantic[0], l.instance[0]), (10, 1));
    assert!(matches!(read_labels(&path, 2), Err(Error::LengthMismatch { expected: 2, found: 1 })));
    let written = labels_to_bytes(&l).unwrap();
    assert_eq!(written, vec![0x0A, 0x00, 0x01, 0x00]);
}

#[test]
fn missing_file_reported() {
    assert!(matches!(read_point_scan("/nonexistent/000000.bin"), Err(Error::Io { .. } | Error::MissingFile(_))));
}

fn scan_strategy() -> impl Strategy<Value = Scan> {
    prop::collection::vec((prop::array::uniform3(-100.0f32..100.0), 0.0f32..=1.0), 0..200)
        .prop_map(|v| {
            let (p, r) = v.into_iter().unzip();
            Scan::new(p, r, 0).unwrap()
        })
}

fn rigid(yaw: f64, pitch: f64, roll: f64, t: [f64; 3]) -> (Pose, Matrix4<f64>) {
    let r = Rotation3::from_euler_angles(roll, pitch, yaw);
    let m4 = r.to_homogeneous().append_translation(&Vector3::from(t));
    let mut v = [0.0; 12];
    for i in 0..3 {
        for j in 0..4 {
            v[i * 4 + j] = m4[(i, j)];
        }
    }
    (Pose::from_row_major(v, Frame::Camera), m4)
}

fn angle() -> impl Strategy<Value = f64> {
    -3.1f64..3.1
}

fn translation() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-50.0f64..50.0)
}

fn pose_text(m: &Matrix4<f64>) -> String {
    let vals: Vec<String> = (0..3)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .map(|(i, j)| format!("{:e}", m[(i, j)]))
        .collect();
    vals.join(" ")
}

proptest! {
    #[test]
    fn scan_bytes_round_trip(scan in scan_strategy()) {
        let bytes = scan.to_bytes();
        let back = Scan::from_bytes(&bytes, 0, std::path::Path::new("x")).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, scan);
    }

    #[test]
    fn label_bytes_round_trip(words in prop::collection::vec(any::<u32>(), 0..300)) {
        let l = PanopticLabels::from_words(&words);
        let bytes = labels_to_bytes(&l).unwrap();
        let expected: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        prop_assert_eq!(&bytes, &expected);
        let back = labels_from_bytes(&bytes, words.len(), std::path::Path::new("x")).unwrap();
        prop_assert_eq!(back, l);
    }

    #[test]
    fn sidecar_round_trip(
        dim in 1usize..5,
        rows in prop::collection::vec((prop::collection::vec(-10.0f32..10.0, 4), 0.0f32..=1.0, prop::collection::vec(0.01f32..10.0, 4)), 0..50),
    ) {
        let mut e = Vec::new();
        let mut o = Vec::new();
        let mut v = Vec::new();
        for (emb, obj, var) in &rows {
            e.extend_from_slice(&emb[..dim]);
            o.push(*obj);
            v.extend_from_slice(&var[..dim]);
        }
        let f = ScanFields::new(dim, e, o, v).unwrap();
        let bytes = f.to_bytes();
        let back = ScanFields::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, f);
    }

    #[test]
    fn pose_conversion_matches_matrix_oracle(
        (y1, p1, r1) in (angle(), angle(), angle()), t1 in translation(),
        (y2, p2, r2) in (angle(), angle(), angle()), t2 in translation(),
    ) {
        let (_, tr) = rigid(y1, p1, r1, t1);
        let (_, p) = rigid(y2, p2, r2, t2);
        let calib = format!("P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: {}\n", pose_text(&tr));
        let tr_pose = read_tr_from_str(&calib).unwrap();
        let poses = read_poses_from_str(&format!("{}\n", pose_text(&p)), &tr_pose).unwrap();
        let oracle = tr.try_inverse().unwrap() * p * tr;
        for i in 0..3 {
            for j in 0..4 {
                prop_assert!((poses[0].m[i][j] - oracle[(i, j)]).abs() < 1e-9);
            }
        }
        prop_assert_eq!(poses[0].frame, Frame::World);
    }

    #[test]
    fn compose_with_inverse_returns_points(
        (y, p, r) in (angle(), angle(), angle()), t in translation(),
        x in prop::array::uniform3(-100.0f64..100.0),
    ) {
        let (pose, _) = rigid(y, p, r, t);
        let back = pose.inverse().apply(pose.apply(x));
        let round = pose.compose(&pose.inverse()).apply(x);
        for k in 0..3 {
            prop_assert!((back[k] - x[k]).abs() < 1e-9);
            prop_assert!((round[k] - x[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn align_matches_homogeneous_product(
        (y, p, r) in (angle(), angle(), angle()), t in translation(),
        scan in scan_strategy(),
    ) {
        let (pose, m4) = rigid(y, p, r, t);
        let world = align_scan(&scan, &pose).unwrap();
        for (w, s) in world.iter().zip(&scan.points) {
            let h = m4 * nalgebra::Vector4::new(s[0] as f64, s[1] as f64, s[2] as f64, 1.0);
            for k in 0..3 {
                prop_assert!((w[k] - h[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn poses_file_round_trip(
        poses in prop::collection::vec(((angle(), angle(), angle()), translation()), 1..10),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let list: Vec<Pose> = poses.iter().map(|((y, p, r), t)| rigid(*y, *p, *r, *t).0.with_frame(Frame::World)).collect();
        write_poses(&list, dir.path().join("poses.txt")).unwrap();
        fs::write(dir.path().join("calib.txt"), "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        let back = read_poses(dir.path().join("poses.txt"), dir.path().join("calib.txt")).unwrap();
        prop_assert_eq!(back, list);
    }
}

#[test]
fn non_rigid_pose_rejected() {
    let tr = Pose::IDENTITY;
    let err = read_poses_from_str("2 0 0 0 0 1 0 0 0 0 1 0\n", &tr).unwrap_err();
    assert!(matches!(err, Error::MalformedPose { line: 1, .. }));
}

#[test]
fn sequence_handle_reads_lazily() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("00");
    fs::create_dir_all(seq.join("velodyne")).unwrap();
    fs::create_dir_all(seq.join("labels")).unwrap();
    for i in 0..3 {
        let scan = Scan::new(vec![[i as f32, 0.0, 0.0]; 2], vec![0.1; 2], i).unwrap();
        write_point_scan(&scan, seq.join("velodyne").join(scan_file_name(i, "bin"))).unwrap();
        let l = PanopticLabels::new(vec![10, 40], vec![i as u32 + 1, 0]).unwrap();
        write_labels(&l, seq.join("labels").join(scan_file_name(i, "label"))).unwrap();
    }
    let h = load_sequence(&seq, None).unwrap();
    assert_eq!(h.len(), 3);
    assert_eq!(h.scan(2).unwrap().points[0], [2.0, 0.0, 0.0]);
    assert_eq!(h.labels(1).unwrap().instance, vec![2, 0]);
    assert!(h.poses().is_err());
    assert!(matches!(h.scan(3), Err(Error::IndexOutOfRange { index: 3, len: 3 })));

    let sub = load_sequence(&seq, Some(1..3)).unwrap();
    assert_eq!(sub.len(), 2);
    assert!(load_sequence(&seq, Some(0..4)).is_err());

    // a label file of the wrong length is caught at access
    write_labels(&PanopticLabels::new(vec![10], vec![0]).unwrap(), seq.join("labels/000002.label")).unwrap();
    assert!(matches!(h.labels(2), Err(Error::LengthMismatch { expected: 2, found: 1 })));
    assert!(matches!(load_sequence(dir.path().join("nope"), None), Err(Error::MissingFile(_))));
}
