"""
Training the CSM-to-CSM GAN at desk scale
=========================================

Build a small task-2 dataset (remove ambient noise), train the generator
for a few epochs and compare it against the identity baseline. Numbers
here are far from converged; raise ``EPOCHS`` to watch g_acc climb.
"""

# %%
import numpy as np

from csmgan import gan, tasks

EPOCHS = 10
profile = tasks.DESK.with_sizes(n_train=64, n_test=16)
train, test = tasks.build_task_split(2, profile, seed=0, workers=tasks.default_workers())
print("train", train.X.shape, " test", test.X.shape)

# %%
# lr 2e-4 is the faster of the two grid learning rates.
model = gan.GanModel(profile.architecture(), lr_gen=2e-4, lr_dis=2e-4, seed=0)
print("shape trace:", model.shape_trace())
config = gan.TrainConfig(lr_gen=2e-4, lr_dis=2e-4, epochs=EPOCHS)
history = gan.train_loop(model, train.X, train.Y, config, test.X, test.Y)
for rec in history:
    print(f"epoch {rec['epoch']:3d}  L_D={rec['loss_d']:.3f}  L_G={rec['loss_g']:.2f}  g_acc={rec['g_acc']:.4f}")

# %%
report = tasks.evaluate(model, test)
print(f"g_acc(G) = {report.mean_G:.4f}   g_acc(Id) = {report.mean_Id:.4f}")
print("samples where G beats Id:", int(np.sum(report.g_acc_G > report.g_acc_Id)), "of", len(test))
