import json, time
import numpy as np
from spinsqueeze import ddpg
from spinsqueeze.dynamics import ModelParams

p = ModelParams(kappa=0.0, gamma=0.0)
variants = {
    "mu98_lra3": dict(discount=0.98, lr_actor=3e-4),
    "mu98_lra3_sig1": dict(discount=0.98, lr_actor=3e-4, sigma0=1.0),
    "mu99_lra3": dict(discount=0.99, lr_actor=3e-4),
}
out = {}
for name, kw in variants.items():
    cfg = ddpg.AgentConfig(episodes=600, steps_per_episode=100, seed=7, **kw)
    t0 = time.time()
    log = ddpg.train(p, cfg, horizon=50.0)
    traj, st = ddpg.evaluate(log.best_control, p, noisy=False)
    r = log.episode_rewards
    roll = [float(np.nanmean(r[max(0,i-99):i+1])) for i in (199, 399, 599)]
    out[name] = {"min_db": float(10*np.log10(traj.min_xi2)), "S_life": float(st.S),
                 "best_S": float(log.best_S), "roll_200_400_600": roll,
                 "mins": float(time.time()-t0)/60}
    print(name, out[name], flush=True)
json.dump(out, open(".pilot/hyper_pilot.json", "w"), indent=1)
