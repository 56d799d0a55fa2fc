"""Export torchvision's ImageNet VGG19 `features` weights to safetensors.

    python3 tools/export_vgg19.py vgg19.safetensors
    export MRSR_VGG19_WEIGHTS=$PWD/vgg19.safetensors

Tensor names are kept as torchvision writes them (features.{i}.weight,
features.{i}.bias). --random skips the download and exports an untrained
network, which is only useful for checking the plumbing.
"""

import argparse

import torch
import torchvision
from safetensors.torch import save_file


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("output")
    ap.add_argument("--random", action="store_true", help="untrained weights, no download")
    args = ap.parse_args()

    weights = None if args.random else torchvision.models.VGG19_Weights.IMAGENET1K_V1
    model = torchvision.models.vgg19(weights=weights)
    tensors = {
        k: v.detach().to(torch.float32).contiguous()
        for k, v in model.state_dict().items()
        if k.startswith("features.")
    }
    save_file(tensors, args.output)
    print(f"{len(tensors)} tensors -> {args.output}")


if __name__ == "__main__":
    main()
