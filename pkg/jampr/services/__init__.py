"""Instance, training, solving and plotting services"""
