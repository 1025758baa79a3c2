use fracreg::polytope::fixtures::{cube, l_prism, tetrahedron};
use fracreg::Polytope;

fn fixture(name: &str) -> Polytope {
    Polytope::load(format!("{}/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"))).expect("fixture loads")
}

#[test]
fn fixture_files_match_builtin_solids() {
    for (name, p) in [("cube", cube()), ("tetrahedron", tetrahedron()), ("l_prism", l_prism())] {
        let q = fixture(name);
        assert_eq!(q.vertices, p.vertices, "{name}");
        assert_eq!(q.edges.len(), p.edges.len(), "{name}");
        assert_eq!(q.faces.len(), p.faces.len(), "{name}");
        assert!((q.volume() - p.volume()).abs() < 1e-12, "{name}");
    }
}

#[test]
fn centered_cube_has_volume_eight() {
    let q = fixture("centered_cube");
    assert_eq!((q.vertices.len(), q.edges.len(), q.faces.len()), (8, 12, 6));
    assert!((q.volume() - 8.0).abs() < 1e-12);
}
