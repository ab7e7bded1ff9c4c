

def test_receding_horizon_smoke():
    """Receding-horizon mode steps through a short window, applying one
    action per frame."""
    from diffcontact.trajopt import OptimConfig, optimize_receding

    verts, faces = make_octahedron(0.1, face_down=True)
    body = TriMeshBody("mover", verts, faces, mass=0.2, inertia=sphere_inertia(0.2, 0.1))
    gv, gf = __import__("diffcontact.geometry", fromlist=["make_ground_quad"]).make_ground_quad(2.0)
    ground = TriMeshBody("ground", gv, gf, static=True)
    bodies = [body, ground]
    base = [Pose(np.array([0.0, 0.0, 0.2]), np.eye(3)), Pose.identity()]
    prev = [p.copy() for p in base]
    h_sub = 2
    control = PdSequenceControl(0, kp=30.0, kd=1.0, horizon=h_sub)
    task = Task(
        bodies=bodies, base_poses=base, base_prev_poses=prev, dt=0.04, mu=1e-7,
        gravity=np.zeros(3), horizon=3, control=control,
        targets=[TargetSpec(0, np.array([0.15, 0.0, 0.2]), 0.02)],
        u0=np.tile([0.15, 0.0, 0.2], h_sub), receding=h_sub,
    )
    backend = BshBackend(bodies)
    cfg = OptimConfig(alpha=1e-2, iters=2)
    applied, losses, final_poses = optimize_receding(task, cfg, backend, inner_iters=2)
    assert len(applied) == 3
    assert len(losses) == 3
    assert final_poses[0].translation[0] > 0.0  # moved toward the target
