"""The learned pipeline: shadow casting, refinement, relighting, adversary.

Network layout (toy scale, fully convolutional in H and W):
  * CastShadowNet: a 3D encoder head over the epipolar volume (three k=4, s=2
    blocks halving H, W and Z while doubling features, then k=(4,3,3),
    s=(2,1,1) depth-collapse stages until Z=1) merged by elementwise max with
    a 2D head over [color, cosine] features, decoded back to an H x W shadow
    image with skip connections from both heads; sigmoid output.
  * RefineNet: small residual encoder-decoder cleaning up the cast shadow for
    the source light, given the photo and the light direction.
  * RelightNet: encoder-decoder producing the relit color from photo, both
    shadow images, normals, view directions and both lights; softplus output.
  * PatchDiscriminator: LSGAN critic with an exactly 64 px receptive field,
    conditioned on the source photo and the target shadow image.

Light directions are injected into the 2D nets as three constant broadcast
channels.  The cast network receives the light only through the volume
geometry and the cosine channel.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .nn import Tensor, Conv2d, Conv3d, Module
from .nn.tensor import _require
from .raster import ColorImage, ShadowImage


def _rngs(rng):
    """Infinite stream of child generators for per-layer init."""
    if isinstance(rng, np.random.Generator):
        while True:
            yield np.random.default_rng(int(rng.integers(0, 2**63)))
    seq = np.random.SeedSequence(rng)
    while True:
        yield np.random.default_rng(seq.spawn(1)[0])


class CastShadowNet(Module):
    """3D-2D encoder-decoder over (volume, 2D features) -> shadow image."""

    def __init__(self, z=32, f=8, rng=0, dtype=np.float32):
        g = _rngs(rng)
        self.z = z
        self.f = f
        _require(z >= 8 and (z & (z - 1)) == 0, f"Z must be a power of two >= 8, got {z}")
        ch3 = [4, f, 2 * f, 4 * f]
        self.enc3d = [Conv3d(ch3[i], ch3[i + 1], 4, stride=2, padding=1,
                             rng=next(g), dtype=dtype) for i in range(3)]
        # after three halvings the depth is z/8; collapse it to 1
        n_collapse = int(np.log2(z // 8))
        self.collapse = [Conv3d(4 * f, 4 * f, (4, 3, 3), stride=(2, 1, 1),
                                padding=1, rng=next(g), dtype=dtype)
                         for _ in range(n_collapse)]
        ch2 = [4, f, 2 * f, 4 * f]
        self.enc2d = [Conv2d(ch2[i], ch2[i + 1], 4, stride=2, padding=1,
                             rng=next(g), dtype=dtype) for i in range(3)]
        # decoder: up blocks consume [up, 2D skip, 3D skip (max over Z)]
        self.dec = [
            Conv2d(4 * f + 2 * f + 2 * f, 2 * f, 3, padding=1, rng=next(g), dtype=dtype),
            Conv2d(2 * f + f + f, f, 3, padding=1, rng=next(g), dtype=dtype),
            Conv2d(f + 4 + 4, f, 3, padding=1, rng=next(g), dtype=dtype),
        ]
        self.out = Conv2d(f, 1, 3, padding=1, rng=next(g), dtype=dtype)

    def __call__(self, vol, feat2d):
        """vol: (N, 4, Z, H, W); feat2d: (N, 4, H, W) -> (N, 1, H, W) in [0,1]."""
        _require(vol.data.shape[2] == self.z,
                 f"volume Z {vol.data.shape[2]} != configured {self.z}")
        _require(vol.data.shape[-2:] == feat2d.data.shape[-2:],
                 f"volume {vol.data.shape} vs feat2d {feat2d.data.shape}")
        skips3 = [nn.reduce_max(vol, axis=2)]
        x3 = vol
        for layer in self.enc3d:
            x3 = nn.leaky_relu(layer(x3))
            skips3.append(nn.reduce_max(x3, axis=2))
        for layer in self.collapse:
            x3 = nn.leaky_relu(layer(x3))
        x3 = nn.reduce_max(x3, axis=2)              # (N, 4f, H/8, W/8)

        skips2 = [feat2d]
        x2 = feat2d
        for layer in self.enc2d:
            x2 = nn.leaky_relu(layer(x2))
            skips2.append(x2)

        x = nn.maximum(x3, x2)                      # merged bottleneck
        for i, layer in enumerate(self.dec):
            x = nn.upsample2x(x)
            s2 = skips2[2 - i]
            s3 = skips3[2 - i]
            x = nn.relu(layer(nn.concat([x, s2, s3], axis=1)))
        return nn.sigmoid(self.out(x))


def _res_block(f, g, dtype):
    return [Conv2d(f, f, 3, padding=1, rng=next(g), dtype=dtype),
            Conv2d(f, f, 3, padding=1, rng=next(g), dtype=dtype)]


class RefineNet(Module):
    """Residual encoder-decoder: (cast shadow, color, light) -> refined shadow.

    The same architecture doubles as the 2D-only shadow ablation, which feeds
    (color, light channels, cosine, corrupted depth) through in_ch=8.
    """

    def __init__(self, f=8, in_ch=7, rng=0, dtype=np.float32):
        g = _rngs(rng)
        self.in_ch = in_ch
        self.enc = Conv2d(in_ch, f, 4, stride=2, padding=1, rng=next(g), dtype=dtype)
        self.res = [_res_block(f, g, dtype) for _ in range(2)]
        self.up = Conv2d(f, f, 3, padding=1, rng=next(g), dtype=dtype)
        self.out = Conv2d(f + in_ch, 1, 3, padding=1, rng=next(g), dtype=dtype)

    def __call__(self, x):
        """x: (N, in_ch, H, W) -> (N, 1, H, W) in [0,1]."""
        h = nn.leaky_relu(self.enc(x))
        for a, b in self.res:
            h = h + b(nn.relu(a(h)))
        h = nn.relu(self.up(nn.upsample2x(h)))
        return nn.sigmoid(self.out(nn.concat([h, x], axis=1)))


class RelightNet(Module):
    """(color, shadows, normals, view dirs, lights) -> non-negative color."""

    IN_CH = 17   # 3 color + 1 + 1 shadows + 3 normals + 3 psi + 3 + 3 lights

    def __init__(self, f=8, rng=0, dtype=np.float32):
        g = _rngs(rng)
        self.enc1 = Conv2d(self.IN_CH, f, 4, stride=2, padding=1, rng=next(g), dtype=dtype)
        self.enc2 = Conv2d(f, 2 * f, 4, stride=2, padding=1, rng=next(g), dtype=dtype)
        self.dec1 = Conv2d(2 * f, f, 3, padding=1, rng=next(g), dtype=dtype)
        self.dec2 = Conv2d(f + f, f, 3, padding=1, rng=next(g), dtype=dtype)
        self.out = Conv2d(f + self.IN_CH, 3, 3, padding=1, rng=next(g), dtype=dtype)

    def __call__(self, x):
        """x: (N, 17, H, W) -> (N, 3, H, W), >= 0."""
        e1 = nn.leaky_relu(self.enc1(x))                        # H/2
        e2 = nn.leaky_relu(self.enc2(e1))                       # H/4
        d = nn.relu(self.dec1(nn.upsample2x(e2)))               # H/2
        d = nn.relu(self.dec2(nn.concat([d, e1], axis=1)))      # H/2
        d = nn.upsample2x(d)                                    # H
        return nn.softplus(self.out(nn.concat([d, x], axis=1)))


class PatchDiscriminator(Module):
    """LSGAN critic; receptive field exactly 64 px (k4s4, k4s4, k4s1)."""

    def __init__(self, in_ch=7, f=8, rng=0, dtype=np.float32):
        g = _rngs(rng)
        self.c1 = Conv2d(in_ch, f, 4, stride=4, rng=next(g), dtype=dtype)
        self.c2 = Conv2d(f, 2 * f, 4, stride=4, rng=next(g), dtype=dtype)
        # padding keeps 32 px inputs legal; interior receptive field stays 64
        self.c3 = Conv2d(2 * f, 1, 4, stride=1, padding=1, rng=next(g),
                         dtype=dtype)

    def __call__(self, x):
        return self.c3(nn.leaky_relu(self.c2(nn.leaky_relu(self.c1(x)))))


# ---------------------------------------------------------------------------
# Functional wrappers operating on raster domain types


def _light_channels(light, h, w, dtype):
    vec = np.asarray(light.vec, dtype=dtype)
    return np.broadcast_to(vec[:, None, None], (3, h, w))


def volume_tensor(vol, dtype=np.float32):
    """EpipolarVolume (H, W, Z, 4) -> network input (1, 4, Z, H, W)."""
    return Tensor(np.ascontiguousarray(
        vol.data.transpose(3, 2, 0, 1)[None], dtype=dtype))


def cast_shadow(net, vol, feat2d):
    """Run C on an epipolar volume and 4-channel 2D features."""
    dtype = net.out.weight.data.dtype
    x3 = volume_tensor(vol, dtype)
    x2 = Tensor(np.ascontiguousarray(feat2d.transpose(2, 0, 1)[None], dtype=dtype))
    out = net(x3, x2)
    return ShadowImage(np.clip(out.data[0, 0].astype(np.float64), 0.0, 1.0))


def refine_input(c_out, img, l_old, dtype=np.float32):
    """Stack (N=1, 7, H, W) refiner input; c_out must already be detached."""
    h, w = img.data.shape[:2]
    chans = np.concatenate([
        np.asarray(c_out.data if isinstance(c_out, ShadowImage) else c_out)[None],
        img.data.transpose(2, 0, 1),
        _light_channels(l_old, h, w, np.float64)], axis=0)
    return Tensor(chans[None].astype(dtype))


def refine_old_shadow(net, c_out, img, l_old):
    dtype = net.out.weight.data.dtype
    out = net(refine_input(c_out, img, l_old, dtype))
    return ShadowImage(np.clip(out.data[0, 0].astype(np.float64), 0.0, 1.0))


def relight_input(img, s_old, s_new, normals, psi, l_old, l_new,
                  dtype=np.float32):
    h, w = img.data.shape[:2]
    def chan(x):
        a = np.asarray(x.data if hasattr(x, "data") else x)
        return a[None] if a.ndim == 2 else a.transpose(2, 0, 1)
    chans = np.concatenate([
        img.data.transpose(2, 0, 1),
        chan(s_old), chan(s_new),
        normals.data.transpose(2, 0, 1),
        psi.data.transpose(2, 0, 1),
        _light_channels(l_old, h, w, np.float64),
        _light_channels(l_new, h, w, np.float64)], axis=0)
    return Tensor(chans[None].astype(dtype))


def relight(net, img, s_old, s_new, normals, psi, l_old, l_new):
    out = net(relight_input(img, s_old, s_new, normals, psi, l_old, l_new,
                            net.out.weight.data.dtype))
    return ColorImage(np.maximum(out.data[0].transpose(1, 2, 0).astype(np.float64), 0.0))


def lsgan_losses(d, real, fake, cond):
    """Least-squares GAN objectives with channel-concat conditioning.

    Returns (gen_loss, disc_loss); the fake branch is detached inside the
    discriminator loss so generator parameters only feel gen_loss.
    """
    d_real = d(nn.concat([real, cond], axis=1))
    d_fake_g = d(nn.concat([fake, cond], axis=1))
    d_fake_d = d(nn.concat([fake.detach(), cond], axis=1))
    one = Tensor(np.ones(d_real.data.shape, dtype=d_real.data.dtype))
    gen_loss = 0.5 * nn.mse(d_fake_g, one)
    disc_loss = 0.5 * nn.mse(d_real, one) + 0.5 * nn.mse(
        d_fake_d, Tensor(np.zeros(d_real.data.shape, dtype=d_real.data.dtype)))
    return gen_loss, disc_loss
