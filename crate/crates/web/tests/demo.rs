use pldg_web::demo::{cluster_blobs, prompt_heatmap, trap_gallery};

#[test]
fn gallery_has_one_label_per_cell() {
    let g = trap_gallery(1.0, "color_tint", 3, 4, 2, 2).unwrap();
    assert_eq!(g.cells.len(), 8);
    assert_eq!(g.rgba.len(), g.width * g.height * 4);
    // full bias: artifact present exactly on odd classes
    assert!(g.cells.iter().all(|&(c, a)| (c % 2 == 1) == (a > 0)));
}

#[test]
fn gallery_rejects_bad_input() {
    assert!(trap_gallery(0.5, "glitter", 0, 2, 2, 1).is_err());
    assert!(trap_gallery(1.5, "color_tint", 0, 2, 2, 1).is_err());
    assert!(trap_gallery(0.5, "color_tint", 0, 0, 2, 1).is_err());
}

#[test]
fn one_hot_heatmap_is_rank_one() {
    let p = prompt_heatmap(3, 5, 1, &[0.0, 2.0, 0.0]).unwrap();
    assert_eq!(p.len(), 15);
    let uniform = prompt_heatmap(3, 5, 1, &[1.0, 1.0, 1.0]).unwrap();
    assert_ne!(p, uniform);
    assert!(prompt_heatmap(3, 5, 1, &[0.0, 0.0]).is_err());
}

#[test]
fn separated_blobs_are_recovered() {
    let out = cluster_blobs(3, 40, 0.05, 3, 9).unwrap();
    assert_eq!(out.points.len(), 120);
    assert!((out.nmi - 1.0).abs() < 1e-12, "nmi {}", out.nmi);
    let noisy = cluster_blobs(3, 40, 2.0, 3, 9).unwrap();
    assert!(noisy.nmi < out.nmi);
}
