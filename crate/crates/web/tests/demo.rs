use splat_avatar_web::{Avatar, View};

#[test]
fn renders_are_sized_and_repeatable() {
    let mut avatar = Avatar::build(48).unwrap();
    let view = View::new(0.4, 0.1, -0.5, 0.3);
    let a = avatar.render(&view).unwrap();
    assert_eq!(a.len(), 48 * 48 * 4);
    assert!(a.chunks_exact(4).all(|p| p[3] == 255));
    assert_eq!(a, avatar.render(&view).unwrap());
    assert!(a.chunks_exact(4).any(|p| p[..3] != [0, 0, 0]), "the figure is in view");
}

#[test]
fn pose_controls_move_the_figure() {
    let avatar = Avatar::build(48).unwrap();
    let rest = avatar.mesh_image(&View::default()).unwrap();
    let raised = avatar.mesh_image(&View::new(0.0, 0.0, 1.0, 0.0)).unwrap();
    assert_ne!(rest, raised);
}

#[test]
fn comparison_scores_are_in_range() {
    let mut avatar = Avatar::build(48).unwrap();
    let (p, s) = avatar.scores(&View::new(0.0, 0.0, -0.5, 0.3)).unwrap();
    assert!(p.is_finite() && p > 0.0, "{p}");
    assert!((-1.0..=1.0).contains(&s), "{s}");
}

#[test]
fn reinitialize_keeps_the_count_and_reset_restores_the_cloud() {
    let mut avatar = Avatar::build(32).unwrap();
    let before = avatar.point_count();
    let view = View::default();
    let original = avatar.render(&view).unwrap();
    let summary = avatar.reinit().unwrap();
    assert!(summary.starts_with(&format!("{before} points")), "{summary}");
    assert_ne!(avatar.render(&view).unwrap(), original);
    avatar.reset().unwrap();
    assert_eq!(avatar.render(&view).unwrap(), original);
}

#[test]
fn zero_size_is_rejected() {
    assert!(Avatar::build(0).is_err());
}
