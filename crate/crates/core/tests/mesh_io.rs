use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use spinefuse_core::mesh::{cuboid, icosphere, load_mesh, load_obj, load_ply, save_obj, save_ply, TriMesh};
use spinefuse_core::Error;

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn obj_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.obj");
    let mesh = TriMesh::new(
        vec![
            Point3::new(0.1, -2.625e-3, 1.0 / 3.0),
            Point3::new(1e-17, 123456.789, -0.0),
            Point3::new(-7.25, 0.0, 9.999999999999999),
        ],
        vec![[0, 1, 2]],
    )
    .unwrap();
    save_obj(&mesh, &path).unwrap();
    let loaded = load_obj(&path).unwrap();
    assert_eq!(mesh.vertices(), loaded.vertices());
    assert_eq!(mesh.faces(), loaded.faces());
}

#[test]
fn obj_accepts_comments_and_blank_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.obj");
    write(
        &path,
        "# header comment\n\nv 0 0 0\nv 1 0 0\n# interleaved\nv 0 1 0\nf 1 2 3\n",
    );
    let mesh = load_obj(&path).unwrap();
    assert_eq!(mesh.vertex_count(), 3);
    assert_eq!(mesh.faces(), &[[0, 1, 2]]);
}

#[test]
fn obj_bad_coordinate_reports_its_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.obj");
    write(&path, "v 1 2 3\nv 4 x 6\n");
    match load_obj(&path) {
        Err(Error::Parse { path: p, offset, message }) => {
            assert_eq!(p, path);
            assert_eq!(offset, 12, "offset of the bad token");
            assert!(message.contains("\"x\""), "message: {message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn obj_face_index_out_of_range_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.obj");
    write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n");
    match load_obj(&path) {
        Err(Error::Parse { offset, message, .. }) => {
            assert_eq!(offset, 30);
            assert!(message.contains("out of range"), "message: {message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn obj_rejects_unsupported_records_and_quads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.obj");
    write(&path, "vn 0 0 1\n");
    assert!(matches!(load_obj(&path), Err(Error::Parse { offset: 0, .. })));

    write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n");
    match load_obj(&path) {
        Err(Error::Parse { message, .. }) => {
            assert!(message.contains("triangles only"), "message: {message}")
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn obj_missing_file_is_io_error_with_path() {
    let err = load_obj(Path::new("/nonexistent/mesh.obj")).unwrap_err();
    match err {
        Error::Io { path, .. } => assert_eq!(path, Path::new("/nonexistent/mesh.obj")),
        other => panic!("expected io error, got {other:?}"),
    }
}

#[test]
fn ply_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.ply");
    let mesh = icosphere(3.25, 2).unwrap();
    save_ply(&mesh, &path).unwrap();
    let loaded = load_ply(&path).unwrap();
    assert_eq!(mesh.vertices(), loaded.vertices());
    assert_eq!(mesh.faces(), loaded.faces());
}

#[test]
fn ply_truncated_body_reports_offset_at_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.ply");
    let mesh = cuboid(Point3::origin(), Vector3::new(1.0, 1.0, 1.0)).unwrap();
    save_ply(&mesh, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let full = bytes.len();
    bytes.truncate(full - 5);
    fs::write(&path, &bytes).unwrap();
    match load_ply(&path) {
        Err(Error::Parse { message, .. }) => {
            assert!(message.contains("unexpected end of file"), "message: {message}")
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn ply_trailing_bytes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.ply");
    let mesh = cuboid(Point3::origin(), Vector3::new(1.0, 1.0, 1.0)).unwrap();
    save_ply(&mesh, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let clean_len = bytes.len() as u64;
    bytes.extend_from_slice(b"junk");
    fs::write(&path, &bytes).unwrap();
    match load_ply(&path) {
        Err(Error::Parse { offset, message, .. }) => {
            assert_eq!(offset, clean_len);
            assert!(message.contains("trailing"), "message: {message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn ply_rejects_wrong_magic_and_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.ply");
    fs::write(&path, b"poly\n").unwrap();
    assert!(matches!(load_ply(&path), Err(Error::Parse { offset: 0, .. })));

    fs::write(&path, b"ply\nformat ascii 1.0\nend_header\n").unwrap();
    match load_ply(&path) {
        Err(Error::Parse { offset, message, .. }) => {
            assert_eq!(offset, 4);
            assert!(message.contains("binary_little_endian"), "message: {message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn ply_rejects_non_triangle_faces() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.ply");
    let mesh = cuboid(Point3::origin(), Vector3::new(1.0, 1.0, 1.0)).unwrap();
    save_ply(&mesh, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    // first face record sits right after 8 vertices × 24 bytes of body
    let header_len = bytes.len() - 8 * 24 - 12 * 13;
    let first_face = header_len + 8 * 24;
    assert_eq!(bytes[first_face], 3);
    bytes[first_face] = 4;
    fs::write(&path, &bytes).unwrap();
    match load_ply(&path) {
        Err(Error::Parse { offset, message, .. }) => {
            assert_eq!(offset, first_face as u64);
            assert!(message.contains("triangles only"), "message: {message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn ply_rejects_float_face_indices_and_odd_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.ply");
    fs::write(
        &path,
        b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n\
          property double x\nproperty double y\nproperty double z\n\
          element face 0\nproperty list uchar float vertex_indices\nend_header\n" as &[u8],
    )
    .unwrap();
    match load_ply(&path) {
        Err(Error::Parse { message, .. }) => {
            assert!(message.contains("integers"), "message: {message}")
        }
        other => panic!("expected parse error, got {other:?}"),
    }

    fs::write(
        &path,
        b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n\
          property double x\nproperty double y\nproperty double w\n\
          element face 0\nproperty list uchar int vertex_indices\nend_header\n" as &[u8],
    )
    .unwrap();
    match load_ply(&path) {
        Err(Error::Parse { message, .. }) => {
            assert!(message.contains("x, y, z"), "message: {message}")
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn load_mesh_dispatches_on_extension() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = cuboid(Point3::origin(), Vector3::new(1.0, 1.0, 1.0)).unwrap();

    let obj = dir.path().join("shape.OBJ");
    save_obj(&mesh, &obj).unwrap();
    assert_eq!(load_mesh(&obj).unwrap().vertex_count(), 8);

    let ply = dir.path().join("shape.ply");
    save_ply(&mesh, &ply).unwrap();
    assert_eq!(load_mesh(&ply).unwrap().vertex_count(), 8);

    let stl = dir.path().join("shape.stl");
    fs::write(&stl, b"solid").unwrap();
    assert!(matches!(load_mesh(&stl), Err(Error::Parameter(_))));
}
